"""Multi-modal prompt construction for generation and refinement rounds."""

from __future__ import annotations

import enum
import hashlib
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Sequence

import numpy as np

from .layout import (
    PKU_TYPES,
    CanvasAsset,
    Element,
    ElementType,
    Layout,
    box_iou,
    element_html,
    round_half_up,
    serialize_html,
)
from .render import render_layout
from .scoring import ScoredCandidate

MAX_PREVIOUS = 5
DEFAULT_NOISE_STD = 0.01

RELATIONS = ("above", "below", "left-of", "right-of", "overlaps",
             "larger-than", "smaller-than", "equal-size")


class TaskKind(str, enum.Enum):
    UNCONSTRAINED = "unconstrained"
    C_TO_SP = "c2sp"
    CS_TO_P = "cs2p"
    COMPLETION = "completion"
    REFINEMENT = "refinement"
    RELATIONSHIP = "relationship"


@dataclass(frozen=True)
class TaskSpec:
    """A generation task and its constraint payload.

    Only the fields relevant to ``kind`` may be set: ``counts`` for c2sp,
    ``sizes`` for cs2p, ``given`` (a partial layout) for completion,
    ``perturbed`` for refinement, ``relations`` (plus optional
    ``categories``) for relationship.
    """

    kind: TaskKind = TaskKind.UNCONSTRAINED
    counts: tuple[tuple[ElementType, int], ...] = ()
    sizes: tuple[tuple[ElementType, float, float], ...] = ()
    given: Layout | None = None
    perturbed: Layout | None = None
    categories: tuple[ElementType, ...] = ()
    relations: tuple[tuple[int, str, int], ...] = ()

    def __post_init__(self):
        kind = TaskKind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "counts", tuple((ElementType(t), int(c)) for t, c in self.counts))
        object.__setattr__(self, "sizes", tuple((ElementType(t), w, h) for t, w, h in self.sizes))
        object.__setattr__(self, "categories", tuple(ElementType(t) for t in self.categories))
        object.__setattr__(self, "relations", tuple((int(i), r, int(j)) for i, r, j in self.relations))
        expected = {
            TaskKind.UNCONSTRAINED: set(),
            TaskKind.C_TO_SP: {"counts"},
            TaskKind.CS_TO_P: {"sizes"},
            TaskKind.COMPLETION: {"given"},
            TaskKind.REFINEMENT: {"perturbed"},
            TaskKind.RELATIONSHIP: {"relations", "categories"},
        }[kind]
        present = {name for name in ("counts", "sizes", "given", "perturbed", "categories", "relations")
                   if getattr(self, name)}
        if present - expected:
            raise ValueError(f"{kind.value} task does not take {sorted(present - expected)}")
        if kind is TaskKind.C_TO_SP and not self.counts:
            raise ValueError("c2sp task needs element counts")
        if kind is TaskKind.CS_TO_P and not self.sizes:
            raise ValueError("cs2p task needs element sizes")
        if kind is TaskKind.COMPLETION and (self.given is None or not len(self.given)):
            raise ValueError("completion task needs at least one given element")
        if kind is TaskKind.REFINEMENT and self.perturbed is None:
            raise ValueError("refinement task needs a perturbed layout")
        if kind is TaskKind.RELATIONSHIP:
            if not self.relations and not self.categories:
                raise ValueError("relationship task needs relations or element categories")
            for i, rel, j in self.relations:
                if rel not in RELATIONS:
                    raise ValueError(f"unknown relation {rel!r}")
                if i < 0 or j < 0 or i == j:
                    raise ValueError(f"bad relation indices ({i}, {j})")
        if any(c < 0 for _, c in self.counts):
            raise ValueError("negative element count")
        if any(w <= 0 or h <= 0 for _, w, h in self.sizes):
            raise ValueError("element sizes must be positive")

    @property
    def expected_counts(self) -> dict[ElementType, int] | None:
        if self.kind is TaskKind.C_TO_SP:
            return dict(self.counts)
        if self.kind is TaskKind.CS_TO_P:
            return dict(Counter(t for t, _, _ in self.sizes))
        return None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "counts": [[t.value, c] for t, c in self.counts],
            "sizes": [[t.value, w, h] for t, w, h in self.sizes],
            "given": None if self.given is None else self.given.to_dict(),
            "perturbed": None if self.perturbed is None else self.perturbed.to_dict(),
            "categories": [t.value for t in self.categories],
            "relations": [list(r) for r in self.relations],
        }


def build_constraint_payload(task: TaskSpec) -> str:
    kind = task.kind
    if kind is TaskKind.UNCONSTRAINED:
        return ""
    if kind is TaskKind.C_TO_SP:
        return "\n".join(f"{t.value}: {c}" for t, c in task.counts)
    if kind is TaskKind.CS_TO_P:
        return "\n".join(f"{t.value} width {round_half_up(w)} px height {round_half_up(h)} px"
                         for t, w, h in task.sizes)
    if kind is TaskKind.COMPLETION:
        return "\n".join(element_html(e, *task.given.dims) for e in task.given)
    if kind is TaskKind.REFINEMENT:
        return serialize_html(task.perturbed)
    return "\n".join(f"element {i} {rel} element {j}" for i, rel, j in task.relations)


# ---------------------------------------------------------------------------
# bundles


@dataclass(frozen=True)
class TextSegment:
    role: str
    text: str


@dataclass(frozen=True, eq=False)
class ImageSegment:
    role: str
    image: np.ndarray
    # the query canvas travels with its saliency for offline backends
    asset: CanvasAsset | None = None


Segment = TextSegment | ImageSegment


@dataclass(frozen=True, eq=False)
class PromptBundle:
    segments: tuple[Segment, ...]
    temperature: float = 0.7
    n: int = 5
    seed: int = 0
    task: TaskSpec = field(default_factory=TaskSpec)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        queries = [s for s in self.segments if isinstance(s, ImageSegment) and s.role == "query_canvas"]
        if len(queries) != 1:
            raise ValueError(f"bundle must hold exactly one query canvas, found {len(queries)}")

    def texts(self, role: str) -> list[str]:
        return [s.text for s in self.segments if isinstance(s, TextSegment) and s.role == role]

    def images(self, role: str) -> list[np.ndarray]:
        return [s.image for s in self.segments if isinstance(s, ImageSegment) and s.role == role]

    @property
    def query(self) -> ImageSegment:
        return next(s for s in self.segments if isinstance(s, ImageSegment) and s.role == "query_canvas")

    @property
    def text(self) -> str:
        return "\n".join(s.text for s in self.segments if isinstance(s, TextSegment))

    def fingerprint(self, params: bool = True) -> str:
        """Hash of the prompt content, plus sampling parameters unless ``params`` is false."""
        h = hashlib.sha256()
        for s in self.segments:
            h.update(s.role.encode())
            if isinstance(s, TextSegment):
                h.update(s.text.encode())
            elif s.role == "query_canvas":
                h.update(np.ascontiguousarray(s.image).tobytes())
        if params:
            h.update(f"{self.temperature}|{self.n}|{self.seed}".encode())
        return h.hexdigest()

    def with_params(self, **kw) -> "PromptBundle":
        params = dict(segments=self.segments, temperature=self.temperature, n=self.n,
                      seed=self.seed, task=self.task)
        params.update(kw)
        return PromptBundle(**params)


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    return resources.files("layoutloop").joinpath("templates", f"{name}.txt").read_text()


def serialize_saliency(bbox: Sequence[float]) -> str:
    l, t, w, h = (round_half_up(v) for v in bbox)
    return f"left {l} px, top {t} px, width {w} px, height {h} px."


def instruction_text(task: TaskSpec, canvas_dims: tuple[int, int],
                     element_types: Sequence[ElementType] = PKU_TYPES) -> str:
    return load_template(task.kind.value).format(
        canvas_width=canvas_dims[0], canvas_height=canvas_dims[1],
        element_types=", ".join(t.value for t in element_types),
    ).strip()


_PAYLOAD_HEADERS = {
    TaskKind.C_TO_SP: "Element counts:",
    TaskKind.CS_TO_P: "Element sizes:",
    TaskKind.COMPLETION: "Given elements (keep them unchanged):",
    TaskKind.REFINEMENT: "Perturbed layout to improve:",
    TaskKind.RELATIONSHIP: "Relations:",
}


def build_initial(query: CanvasAsset, icl: Sequence[tuple[CanvasAsset, Layout]],
                  task: TaskSpec = TaskSpec(), temperature: float = 0.7, n: int = 5, seed: int = 0,
                  element_types: Sequence[ElementType] = PKU_TYPES) -> PromptBundle:
    """The from-scratch prompt: instructions, ICL blocks, then the query block."""
    if not icl:
        raise ValueError("at least one in-context example is required")
    segs: list[Segment] = [TextSegment("instruction", instruction_text(task, query.dims, element_types))]
    for i, (canvas, layout) in enumerate(icl, 1):
        segs += [
            TextSegment("icl_header", f"Example {i}:"),
            ImageSegment("icl_render", render_layout(canvas, layout)),
            TextSegment("icl_saliency", "Salient region: " + serialize_saliency(canvas.saliency_bbox)),
            TextSegment("icl_layout", serialize_html(layout)),
        ]
    segs += [
        TextSegment("query_header", "Test canvas:"),
        ImageSegment("query_canvas", query.image, asset=query),
        TextSegment("query_saliency", "Salient region: " + serialize_saliency(query.saliency_bbox)),
    ]
    if task.kind is not TaskKind.UNCONSTRAINED:
        segs.append(TextSegment("constraint", _PAYLOAD_HEADERS[task.kind] + "\n" + build_constraint_payload(task)))
        if task.kind is TaskKind.RELATIONSHIP and task.categories:
            segs.append(TextSegment("constraint", "Elements: " + ", ".join(
                f"{i} {t.value}" for i, t in enumerate(task.categories))))
    segs.append(TextSegment("cue", "Generate a layout for the test canvas in the HTML format above."))
    return PromptBundle(tuple(segs), temperature=temperature, n=n, seed=seed, task=task)


def build_refinement(prev: Sequence[ScoredCandidate], suggestions: Sequence[str],
                     base: PromptBundle, seed: int | None = None) -> PromptBundle:
    """Extend the initial prompt with scored previous candidates and suggestions."""
    if not prev:
        raise ValueError("refinement needs at least one previous candidate")
    if len(prev) > MAX_PREVIOUS:
        raise ValueError(f"at most {MAX_PREVIOUS} previous candidates, got {len(prev)}")
    if any(a.score < b.score for a, b in zip(prev, prev[1:])):
        raise ValueError("previous candidates must be sorted by score, best first")
    canvas = base.query.asset if base.query.asset is not None else base.query.image
    segs = list(base.segments)
    segs.append(TextSegment("candidates_header", "Previous layouts for the test canvas (best first):"))
    for rank, cand in enumerate(prev, 1):
        segs += [
            TextSegment("candidate_header", f"Candidate {rank}:"),
            ImageSegment("candidate_render", render_layout(canvas, cand.layout)),
            TextSegment("candidate_layout", serialize_html(cand.layout)),
            TextSegment("candidate_score", f"score: {cand.score:.2f}"),
        ]
    segs.extend(TextSegment("suggestion", s) for s in suggestions)
    segs.append(TextSegment("refine_instruction", load_template("refine").strip()))
    return base.with_params(segments=tuple(segs), seed=base.seed if seed is None else seed)


# ---------------------------------------------------------------------------
# constrained-task helpers


def perturb_layout(layout: Layout, sigma: float = DEFAULT_NOISE_STD, seed: int | None = None) -> Layout:
    """Add N(0, sigma) noise to every normalized coordinate, then clamp."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return layout
    W, H = layout.dims
    rng = np.random.default_rng(seed)
    scale = np.array([W, H, W, H], dtype=np.float64)
    out = []
    for e in layout.elements:
        l, t, w, h = (np.array(e.box) / scale + rng.normal(0.0, sigma, 4)) * scale
        l = min(max(l, 0.0), W - 1.0)
        t = min(max(t, 0.0), H - 1.0)
        w = min(max(w, 1.0), W - l)
        h = min(max(h, 1.0), H - t)
        out.append(Element(e.etype, float(l), float(t), float(w), float(h)))
    return layout.replace(out)


def _pair_relation(a: Element, b: Element) -> str:
    if a.bottom <= b.top:
        return "above"
    if b.bottom <= a.top:
        return "below"
    if a.right <= b.left:
        return "left-of"
    if b.right <= a.left:
        return "right-of"
    ratio = a.area / b.area
    if ratio >= 1.2:
        return "larger-than"
    if ratio <= 1 / 1.2:
        return "smaller-than"
    if abs(a.area - b.area) <= 0.05 * max(a.area, b.area):
        return "equal-size"
    if box_iou(a.box, b.box) > 0:
        return "overlaps"
    return "larger-than" if ratio > 1 else "smaller-than"


def derive_task(layout: Layout, kind: TaskKind | str, seed: int | None = 0,
                sigma: float = DEFAULT_NOISE_STD) -> TaskSpec:
    """A task whose constraints the ground-truth ``layout`` satisfies."""
    kind = TaskKind(kind)
    if kind is TaskKind.UNCONSTRAINED:
        return TaskSpec()
    if kind is TaskKind.C_TO_SP:
        counts = Counter(e.etype for e in layout)
        return TaskSpec(kind, counts=tuple(counts.items()))
    if kind is TaskKind.CS_TO_P:
        return TaskSpec(kind, sizes=tuple((e.etype, e.width, e.height) for e in layout))
    if kind is TaskKind.COMPLETION:
        return TaskSpec(kind, given=layout.replace(layout.elements[:max(1, len(layout) // 2)]))
    if kind is TaskKind.REFINEMENT:
        return TaskSpec(kind, perturbed=perturb_layout(layout, sigma, seed))
    # disjoint pairs (0,1), (2,3), ... so each element sits in one relation
    els = layout.elements
    relations = tuple((i, _pair_relation(els[i], els[i + 1]), i + 1) for i in range(0, len(els) - 1, 2))
    return TaskSpec(kind, categories=tuple(e.etype for e in els), relations=relations)
