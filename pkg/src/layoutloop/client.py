"""Vision-language model backends.

Two HTTP wire formats are supported (OpenAI-style chat completions and
Gemini ``generateContent``) plus deterministic offline mocks:

``mock:echo-icl``
    returns the in-context layouts with seeded jitter.
``mock:malformed(k=2)``
    the first ``k`` calls for a given prompt return prose, later calls
    behave like ``mock:improver``.
``mock:improver``
    echoes on the initial prompt; on refinement prompts it edits the best
    previous candidate according to the suggestions it was given.
"""

from __future__ import annotations

import base64
import hashlib
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Sequence

import httpx
import numpy as np

from . import metrics
from .layout import (
    CanvasAsset,
    Element,
    ElementType,
    Layout,
    ParseFailure,
    box_contains,
    box_iou,
    parse_html,
    serialize_html,
)
from .prompts import PromptBundle, TextSegment
from .render import encode_png
from .scoring import SCORE_ORDER, SUGGESTION_KEYS, fused_score, normalize

log = logging.getLogger(__name__)

ENV_KEY = "VASCAR_API_KEY"
ENV_BASE = "VASCAR_API_BASE"

DEFAULT_BASES = {
    "openai-compatible": "https://api.openai.com/v1",
    "gemini": "https://generativelanguage.googleapis.com/v1beta",
}
DEFAULT_MODELS = {"openai-compatible": "gpt-4o", "gemini": "gemini-1.5-flash"}
DEFAULT_TEMPERATURES = {"gemini": 1.4, "openai": 0.7}


class BackendError(RuntimeError):
    """Base class for backend failures."""


class AuthError(BackendError):
    pass


class RateLimited(BackendError):
    pass


class BackendTimeout(BackendError):
    pass


class MalformedResponse(BackendError):
    pass


@dataclass
class BackendConfig:
    kind: str = "openai-compatible"
    base_url: str | None = None
    model: str | None = None
    temperature: float | None = None
    n: int = 5
    timeout: float = 120.0
    max_retries: int = 4
    rate_limit: float | None = None  # requests per minute
    api_key: str | None = None
    native_n: bool = True
    max_image_side: int = 768
    backoff_base: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.temperature is None:
            self.temperature = DEFAULT_TEMPERATURES[self.style]
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not self.is_mock:
            self.base_url = (self.base_url or DEFAULT_BASES[self.kind]).rstrip("/")
            self.model = self.model or DEFAULT_MODELS[self.kind]

    @property
    def is_mock(self) -> bool:
        return self.kind.startswith("mock:")

    @property
    def style(self) -> str:
        """``gemini`` or ``openai``; drives temperature and iteration defaults."""
        if self.kind == "gemini":
            return "gemini"
        if self.kind in DEFAULT_BASES or self.is_mock:
            return "openai"
        raise ValueError(f"unknown backend kind {self.kind!r}")

    @classmethod
    def from_env(cls, kind: str = "openai-compatible", **kw) -> "BackendConfig":
        kw.setdefault("api_key", os.environ.get(ENV_KEY))
        kw.setdefault("base_url", os.environ.get(ENV_BASE) or None)
        return cls(kind=kind, **kw)


@dataclass
class Usage:
    requests: int = 0
    retries: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def add(self, other: "Usage") -> None:
        self.requests += other.requests
        self.retries += other.retries
        self.prompt_tokens += other.prompt_tokens
        self.completion_tokens += other.completion_tokens

    def to_dict(self) -> dict:
        return {"requests": self.requests, "retries": self.retries,
                "prompt_tokens": self.prompt_tokens, "completion_tokens": self.completion_tokens}


@dataclass
class ModelResponse:
    completions: list[str]
    usage: Usage = field(default_factory=Usage)


class RateLimiter:
    """Spaces calls at least ``60 / per_minute`` seconds apart across threads."""

    def __init__(self, per_minute: float | None, clock=time.monotonic, sleep=time.sleep):
        self.interval = 60.0 / per_minute if per_minute else 0.0
        self._clock, self._sleep = clock, sleep
        self._next = 0.0
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if not self.interval:
            return
        with self._lock:
            now = self._clock()
            slot = max(now, self._next)
            self._next = slot + self.interval
        if slot > now:
            self._sleep(slot - now)


class Backend:
    """Common bookkeeping; subclasses implement :meth:`_complete`."""

    def __init__(self, cfg: BackendConfig):
        self.cfg = cfg
        self.usage = Usage()
        self._usage_lock = threading.Lock()

    def complete(self, bundle: PromptBundle) -> ModelResponse:
        try:
            resp = self._complete(bundle)
        except BackendError as exc:
            # failed calls still cost requests; keep the books exact
            with self._usage_lock:
                self.usage.add(getattr(exc, "usage", None) or Usage())
            raise
        resp.completions = resp.completions[: bundle.n]
        with self._usage_lock:
            self.usage.add(resp.usage)
        return resp

    def _complete(self, bundle: PromptBundle) -> ModelResponse:
        raise NotImplementedError

    def close(self) -> None:
        pass


# ---------------------------------------------------------------------------
# HTTP backends


def _data_url(image: np.ndarray, max_side: int) -> tuple[str, str]:
    return "image/png", base64.b64encode(encode_png(image, max_side)).decode("ascii")


class HTTPBackend(Backend):
    def __init__(self, cfg: BackendConfig, transport: httpx.BaseTransport | None = None,
                 limiter: RateLimiter | None = None, sleep=time.sleep):
        super().__init__(cfg)
        self._client = httpx.Client(timeout=cfg.timeout, transport=transport)
        self._limiter = limiter or RateLimiter(cfg.rate_limit)
        self._sleep = sleep

    def close(self) -> None:
        self._client.close()

    def _request(self, bundle: PromptBundle, n: int, seed: int | None) -> tuple[str, dict, dict]:
        raise NotImplementedError

    def _parse(self, data: dict) -> tuple[list[str], int, int]:
        raise NotImplementedError

    def _post(self, url: str, payload: dict, headers: dict, usage: Usage) -> dict:
        """POST with retries on 429/5xx/timeouts; auth errors fail immediately."""
        error: BackendError | None = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt:
                usage.retries += 1
                self._sleep(self.cfg.backoff_base * 2 ** (attempt - 1))
            self._limiter.acquire()
            usage.requests += 1
            try:
                resp = self._client.post(url, json=payload, headers=headers)
            except httpx.TimeoutException as exc:
                error = BackendTimeout(f"request timed out: {exc}")
                continue
            except httpx.TransportError as exc:
                error = BackendError(f"transport error: {exc}")
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            if resp.status_code == 429:
                error = RateLimited(f"rate limited after {attempt + 1} attempt(s)")
                retry_after = resp.headers.get("retry-after")
                if retry_after and retry_after.replace(".", "", 1).isdigit():
                    self._sleep(float(retry_after))
                continue
            if resp.status_code >= 500:
                error = BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                continue
            if resp.status_code >= 400:
                raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise MalformedResponse(f"response is not JSON: {exc}") from exc
        assert error is not None
        raise error

    def _complete(self, bundle: PromptBundle) -> ModelResponse:
        usage = Usage()
        completions: list[str] = []
        if self.cfg.native_n or bundle.n == 1:
            calls = [(bundle.n, bundle.seed)]
        else:
            calls = [(1, bundle.seed * 1000 + j) for j in range(bundle.n)]
        try:
            for n, seed in calls:
                url, payload, headers = self._request(bundle, n, seed)
                data = self._post(url, payload, headers, usage)
                try:
                    texts, p_tok, c_tok = self._parse(data)
                except (KeyError, IndexError, TypeError, AttributeError) as exc:
                    raise MalformedResponse(f"unexpected response shape: {exc!r}") from exc
                completions.extend(texts)
                usage.prompt_tokens += p_tok
                usage.completion_tokens += c_tok
        except BackendError as exc:
            exc.usage = usage
            raise
        return ModelResponse(completions, usage)


class OpenAIBackend(HTTPBackend):
    """OpenAI-compatible ``/chat/completions`` with ``image_url`` content parts."""

    def _request(self, bundle, n, seed):
        content = []
        for s in bundle.segments:
            if isinstance(s, TextSegment):
                content.append({"type": "text", "text": s.text})
            else:
                mime, data = _data_url(s.image, self.cfg.max_image_side)
                content.append({"type": "image_url", "image_url": {"url": f"data:{mime};base64,{data}"}})
        payload = {
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": bundle.temperature,
            "n": n,
            "seed": seed,
        }
        headers = {"Authorization": f"Bearer {self.cfg.api_key or ''}"}
        return f"{self.cfg.base_url}/chat/completions", payload, headers

    def _parse(self, data):
        texts = [c["message"]["content"] or "" for c in data["choices"]]
        usage = data.get("usage") or {}
        return texts, int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))


class GeminiBackend(HTTPBackend):
    """Gemini ``generateContent`` with ``inlineData`` parts."""

    def _request(self, bundle, n, seed):
        parts = []
        for s in bundle.segments:
            if isinstance(s, TextSegment):
                parts.append({"text": s.text})
            else:
                mime, data = _data_url(s.image, self.cfg.max_image_side)
                parts.append({"inlineData": {"mimeType": mime, "data": data}})
        payload = {
            "contents": [{"role": "user", "parts": parts}],
            "generationConfig": {"temperature": bundle.temperature, "candidateCount": n, "seed": seed},
        }
        headers = {"x-goog-api-key": self.cfg.api_key or ""}
        return f"{self.cfg.base_url}/models/{self.cfg.model}:generateContent", payload, headers

    def _parse(self, data):
        texts = []
        for cand in data["candidates"]:
            parts = cand.get("content", {}).get("parts", [])
            texts.append("".join(p.get("text", "") for p in parts))
        meta = data.get("usageMetadata") or {}
        return texts, int(meta.get("promptTokenCount", 0)), int(meta.get("candidatesTokenCount", 0))


# ---------------------------------------------------------------------------
# offline mocks

JITTER_STD = 0.01
REFINE_JITTER_STD = 0.005  # refinement copies stay close to their source
REFUSAL = "I cannot generate that."


def _rng(*keys) -> np.random.Generator:
    digest = hashlib.sha256("|".join(map(str, keys)).encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def jitter_layout(layout: Layout, rng: np.random.Generator, std: float = JITTER_STD) -> Layout:
    """Shift every box by normalized Gaussian noise; integer output, sizes kept."""
    W, H = layout.dims
    out = []
    for e in layout.rounded():
        dx, dy = rng.normal(0.0, std, 2) * (W, H)
        left = min(max(int(round(e.left + dx)), 0), W - int(e.width))
        top = min(max(int(round(e.top + dy)), 0), H - int(e.height))
        out.append(e.with_box((left, top, e.width, e.height)))
    return layout.replace(out)


def _groups(layout: Layout) -> list[list[int]]:
    """Underlays with the elements they contain, plus free elements."""
    els = layout.elements
    taken: set[int] = set()
    groups = []
    for i, u in enumerate(els):
        if u.etype is ElementType.UNDERLAY:
            members = [i] + [j for j, o in enumerate(els)
                             if j != i and j not in taken and o.etype is not ElementType.UNDERLAY
                             and box_contains(u.box, o.box)]
            taken.update(members)
            groups.append(members)
    groups.extend([i] for i in range(len(els)) if i not in taken)
    return groups


def _shift(layout: Layout, idx: Sequence[int], dx: int, dy: int) -> Layout | None:
    W, H = layout.dims
    els = list(layout.elements)
    for i in idx:
        e = els[i]
        if e.left + dx < 0 or e.top + dy < 0 or e.right + dx > W or e.bottom + dy > H:
            return None
        els[i] = e.with_box((e.left + dx, e.top + dy, e.width, e.height))
    return layout.replace(els)


def _group_box(layout: Layout, idx: Sequence[int]) -> tuple[int, int, int, int]:
    els = [layout.elements[i] for i in idx]
    x0, y0 = min(e.left for e in els), min(e.top for e in els)
    x1, y1 = max(e.right for e in els), max(e.bottom for e in els)
    return x0, y0, x1, y1


def _quality(canvas: CanvasAsset, layout: Layout) -> float:
    return fused_score(normalize(metrics.evaluate(canvas, layout)))


def _best_move(layout: Layout, canvas: CanvasAsset, idx: Sequence[int], moves, key) -> Layout:
    """Apply the move minimising ``key`` if it lowers ``key`` without hurting overall quality."""
    current, quality = key(layout), _quality(canvas, layout)
    options = []
    for dx, dy in moves:
        moved = _shift(layout, idx, dx, dy) if (dx or dy) else None
        if moved is not None:
            options.append((key(moved), abs(dx) + abs(dy), moved))
    for value, _, moved in sorted(options, key=lambda o: o[:2]):
        if value >= current:
            break
        if _quality(canvas, moved) >= quality:
            return moved
    return layout


def _edit_occ(layout: Layout, canvas: CanvasAsset) -> Layout:
    sl, st, sw, sh = canvas.saliency_bbox
    W, H = layout.dims
    step_x, step_y = max(1, W // 20), max(1, H // 20)
    for idx in _groups(layout):
        x0, y0, x1, y1 = _group_box(layout, idx)
        moves = [(0, st - y1), (0, st + sh - y0), (sl - x1, 0), (sl + sw - x0, 0)]
        moves += [(s * k, 0) for k in (1, step_x) for s in (1, -1)]
        moves += [(0, s * k) for k in (1, step_y) for s in (1, -1)]
        layout = _best_move(layout, canvas, idx, moves, lambda l: metrics.occlusion(canvas, l))
    return layout


def _edit_rea(layout: Layout, canvas: CanvasAsset) -> Layout:
    W, H = layout.dims
    steps = sorted({(1, 1), (2, 2), (max(1, W // 20), max(1, H // 20))})
    for idx in _groups(layout):
        if not any(layout.elements[i].etype is ElementType.TEXT for i in idx):
            continue
        moves = [(sx * kx, sy * ky) for kx, ky in steps for sx in (-1, 0, 1) for sy in (-1, 0, 1)]
        layout = _best_move(layout, canvas, idx, moves, lambda l: metrics.unreadability(canvas, l))
    return layout


def _separate(a: Element, b: Element) -> list[tuple[Element, Element]]:
    """Ways of trimming ``a`` and/or ``b`` so they stop overlapping."""
    out = []
    for keep, cut, swap in ((a, b, False), (b, a, True)):
        boxes = []
        if cut.right > keep.right:
            boxes.append((keep.right, cut.top, cut.right - keep.right, cut.height))
        if cut.left < keep.left:
            boxes.append((cut.left, cut.top, keep.left - cut.left, cut.height))
        if cut.bottom > keep.bottom:
            boxes.append((cut.left, keep.bottom, cut.width, cut.bottom - keep.bottom))
        if cut.top < keep.top:
            boxes.append((cut.left, cut.top, cut.width, keep.top - cut.top))
        for box in boxes:
            trimmed = cut.with_box(box)
            out.append((trimmed, keep) if swap else (keep, trimmed))
    if not out:
        # one box sits inside the other on both axes: split the union in two
        x0, x1 = min(a.left, b.left), max(a.right, b.right)
        if x1 - x0 >= 2:
            mid = (x0 + x1) // 2
            out.append((a.with_box((x0, a.top, mid - x0, a.height)), b.with_box((mid, b.top, x1 - mid, b.height))))
    return out


def _edit_ove(layout: Layout) -> Layout:
    for _ in range(3 * len(layout) ** 2):
        els = list(layout.elements)
        pair = next(((i, j) for i in range(len(els)) for j in range(i + 1, len(els))
                     if ElementType.UNDERLAY not in (els[i].etype, els[j].etype)
                     and box_iou(els[i].box, els[j].box) > 0), None)
        if pair is None:
            break
        i, j = pair
        options = _separate(els[i], els[j])
        if not options:
            break
        a, b = max(options, key=lambda ab: ab[0].area + ab[1].area)
        els[i], els[j] = a, b
        candidate = layout.replace(els)
        if metrics.overlay(candidate) > metrics.overlay(layout):
            break
        layout = candidate
    return layout


def _edit_align(layout: Layout) -> Layout:
    W, H = layout.dims
    snap = (0.03 * W, 0.03 * H)
    for i in range(len(layout)):
        e = layout.elements[i]
        best = None
        for axis, lines in ((0, lambda x: (x.left, x.left + x.width / 2, x.right)),
                            (1, lambda x: (x.top, x.top + x.height / 2, x.bottom))):
            mine = lines(e)
            for j, o in enumerate(layout.elements):
                if j == i:
                    continue
                for a, b in zip(mine, lines(o)):
                    delta = b - a
                    if 0 < abs(delta) <= snap[axis] and (best is None or abs(delta) < abs(best[1])):
                        best = (axis, delta)
        if best is None:
            continue
        axis, delta = best
        delta = int(round(delta))
        moved = _shift(layout, [i], delta if axis == 0 else 0, delta if axis == 1 else 0)
        if moved is not None and metrics.non_alignment(moved) <= metrics.non_alignment(layout):
            layout = moved
    return layout


def _edit_und(layout: Layout) -> Layout:
    els = list(layout.elements)
    others = [e for e in els if e.etype is not ElementType.UNDERLAY]
    if not others:
        return layout
    for i, u in enumerate(els):
        if u.etype is not ElementType.UNDERLAY or any(box_contains(u.box, o.box) for o in others):
            continue
        ux, uy = u.left + u.width / 2, u.top + u.height / 2
        target = max(others, key=lambda o: (box_iou(u.box, o.box),
                                             -abs(o.left + o.width / 2 - ux) - abs(o.top + o.height / 2 - uy)))
        x0, y0 = min(u.left, target.left), min(u.top, target.top)
        x1, y1 = max(u.right, target.right), max(u.bottom, target.bottom)
        els[i] = u.with_box((x0, y0, x1 - x0, y1 - y0))
    candidate = layout.replace(els)
    und_new, _ = metrics.underlay_effectiveness(candidate)
    und_old, _ = metrics.underlay_effectiveness(layout)
    return candidate if und_new >= und_old else layout


def apply_suggestions(layout: Layout, keys: Sequence[str], canvas: CanvasAsset | None = None) -> Layout:
    """Apply the edit for each suggested metric, in score order."""
    for key in SCORE_ORDER:
        if key not in keys:
            continue
        if key == "occ" and canvas is not None:
            layout = _edit_occ(layout, canvas)
        elif key == "rea" and canvas is not None:
            layout = _edit_rea(layout, canvas)
        elif key == "ove":
            layout = _edit_ove(layout)
        elif key == "align":
            layout = _edit_align(layout)
        elif key == "und":
            layout = _edit_und(layout)
    return layout


def mock_improver_step(prev_candidates: Sequence[Layout], suggestions: Sequence[str], seed,
                       canvas: CanvasAsset | None = None, n: int = 5) -> list[str]:
    """Jittered copies of the best previous layout, edited per the suggestions.

    ``prev_candidates`` is best-first. Unknown suggestion strings are ignored.
    """
    if not prev_candidates:
        raise ValueError("improver needs at least one previous candidate")
    keys = [SUGGESTION_KEYS[s] for s in suggestions if s in SUGGESTION_KEYS]
    best = prev_candidates[0]
    out = []
    for j in range(n):
        # the first completion edits the best layout as is, the rest start from jittered copies
        cand = best.rounded() if j == 0 else jitter_layout(best, _rng(seed, "improve", j), REFINE_JITTER_STD)
        if keys:
            cand = apply_suggestions(cand, keys, canvas)
        out.append(serialize_html(cand))
    return out


_MALFORMED_RE = re.compile(r"mock:malformed(?:\(k=(\d+)\))?$")


class MockBackend(Backend):
    def __init__(self, cfg: BackendConfig):
        super().__init__(cfg)
        policy = cfg.kind.split(":", 1)[1]
        self.fail_first = 0
        if policy.startswith("malformed"):
            m = _MALFORMED_RE.match(cfg.kind)
            if not m:
                raise ValueError(f"bad mock spec {cfg.kind!r}")
            self.fail_first = int(m.group(1) or 2)
            policy = "improver"
        if policy not in ("echo-icl", "improver"):
            raise ValueError(f"unknown mock policy {cfg.kind!r}")
        self.policy = policy
        self._seen: dict[str, int] = {}
        self._lock = threading.Lock()

    def _echo(self, bundle: PromptBundle, dims: tuple[int, int], key: str) -> list[str]:
        icl = [parse_html(t, dims) for t in bundle.texts("icl_layout")]
        if not icl:
            raise MalformedResponse("mock:echo-icl needs in-context layouts in the prompt")
        return [serialize_html(jitter_layout(icl[j % len(icl)], _rng(self.cfg.seed, key, j)))
                for j in range(bundle.n)]

    def _complete(self, bundle: PromptBundle) -> ModelResponse:
        key = bundle.fingerprint()
        content = bundle.fingerprint(params=False)  # retries differ only in seed
        with self._lock:
            calls = self._seen.get(content, 0)
            self._seen[content] = calls + 1
        if calls < self.fail_first:
            completions = [REFUSAL] * bundle.n
        else:
            query = bundle.query
            dims = (query.image.shape[1], query.image.shape[0])
            previous = bundle.texts("candidate_layout")
            if self.policy == "improver" and previous:
                prev = []
                for text in previous:
                    try:
                        prev.append(parse_html(text, dims))
                    except ParseFailure:
                        continue
                completions = mock_improver_step(prev, bundle.texts("suggestion"), (self.cfg.seed, key),
                                                 canvas=query.asset, n=bundle.n)
            else:
                completions = self._echo(bundle, dims, key)
        usage = Usage(requests=1, prompt_tokens=len(bundle.text) // 4,
                      completion_tokens=sum(len(c) for c in completions) // 4)
        return ModelResponse(completions, usage)


def make_backend(cfg: BackendConfig, **kw) -> Backend:
    if cfg.is_mock:
        return MockBackend(cfg)
    if cfg.kind == "gemini":
        return GeminiBackend(cfg, **kw)
    if cfg.kind == "openai-compatible":
        return OpenAIBackend(cfg, **kw)
    raise ValueError(f"unknown backend kind {cfg.kind!r}")


def complete(bundle: PromptBundle, cfg: BackendConfig) -> ModelResponse:
    """One-shot call; prefer a long-lived backend from :func:`make_backend`."""
    backend = make_backend(cfg)
    try:
        return backend.complete(bundle)
    finally:
        backend.close()
