"""The generate / score / suggest / refine loop for one canvas."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import DBSCAN

from .client import AuthError, Backend, BackendError, Usage
from .layout import PKU_TYPES, CanvasAsset, ElementType, Layout, ParseFailure, box_iou, parse_html, serialize_html
from .metrics import evaluate
from .prompts import TaskKind, TaskSpec, build_initial, build_refinement
from .retrieval import DatasetIndex, retrieve
from .scoring import ALIGN_REF, ScoredCandidate, ScoreWeights, fused_score, icl_thresholds, normalize, suggest

log = logging.getLogger(__name__)

CLUSTER_EPS = 0.4
SIZE_TOLERANCE = 5.0
POSITION_TOLERANCE = 1.0
AREA_SLACK = 0.05


class SampleFailed(RuntimeError):
    """The initial round never produced a parsable layout."""


@dataclass
class RunConfig:
    iterations: int = 5
    candidates: int = 5
    pool_size: int = 5
    icl_count: int = 10
    retries: int = 3
    weights: ScoreWeights = field(default_factory=ScoreWeights)
    align_ref: float = ALIGN_REF
    task: TaskSpec = field(default_factory=TaskSpec)
    seed: int = 0
    temperature: float | None = None
    retrieval: str = "iou"
    violation_penalty: float = 0.2
    element_types: tuple[ElementType, ...] = PKU_TYPES

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if min(self.candidates, self.pool_size, self.icl_count, self.retries) < 1:
            raise ValueError("candidates, pool_size, icl_count and retries must be >= 1")

    @classmethod
    def for_style(cls, style: str, **kw) -> "RunConfig":
        """Defaults per backend family: 15 rounds for gemini-style, 5 otherwise."""
        kw.setdefault("iterations", 15 if style == "gemini" else 5)
        return cls(**kw)


# ---------------------------------------------------------------------------
# constraints


def _unmatched(required: Sequence, available: Sequence, ok) -> list[int]:
    """Indices of ``required`` left over by a maximum matching into ``available`` under ``ok``."""
    if not required:
        return []
    if not available:
        return list(range(len(required)))
    cost = np.array([[0.0 if ok(r, a) else 1.0 for a in available] for r in required])
    rows, cols = linear_sum_assignment(cost)
    matched = {r for r, c in zip(rows, cols) if cost[r, c] == 0}
    return [i for i in range(len(required)) if i not in matched]


def _relation_holds(a, rel: str, b) -> bool:
    if rel == "above":
        return a.bottom <= b.top
    if rel == "below":
        return b.bottom <= a.top
    if rel == "left-of":
        return a.right <= b.left
    if rel == "right-of":
        return b.right <= a.left
    if rel == "overlaps":
        return box_iou(a.box, b.box) > 0
    if rel == "larger-than":
        return a.area >= (1 - AREA_SLACK) * b.area
    if rel == "smaller-than":
        return a.area <= (1 + AREA_SLACK) * b.area
    if rel == "equal-size":
        return abs(a.area - b.area) <= AREA_SLACK * max(a.area, b.area)
    raise ValueError(f"unknown relation {rel!r}")


def validate_constraints(layout: Layout, task: TaskSpec) -> list[str]:
    """Human-readable constraint violations (empty when the layout complies)."""
    violations: list[str] = []
    kind = task.kind
    expected = task.expected_counts
    if expected is not None:
        actual: dict[ElementType, int] = {}
        for e in layout:
            actual[e.etype] = actual.get(e.etype, 0) + 1
        for t in list(expected) + [t for t in actual if t not in expected]:
            want, got = expected.get(t, 0), actual.get(t, 0)
            if want != got:
                violations.append(f"count: expected {want} {t.value}, got {got}")
    if kind is TaskKind.CS_TO_P:
        for t in dict.fromkeys(s[0] for s in task.sizes):
            specs = [(w, h) for tt, w, h in task.sizes if tt is t]
            els = layout.of_type(t)
            missing = _unmatched(specs, els, lambda s, e: abs(e.width - s[0]) <= SIZE_TOLERANCE
                                 and abs(e.height - s[1]) <= SIZE_TOLERANCE)
            for i in missing:
                w, h = specs[i]
                violations.append(f"size: no {t.value} of width {w} px height {h} px")
    elif kind is TaskKind.COMPLETION:
        given = list(task.given)
        missing = _unmatched(given, list(layout), lambda g, e: g.etype is e.etype and all(
            abs(x - y) <= POSITION_TOLERANCE for x, y in zip(g.box, e.box)))
        for i in missing:
            g = given[i]
            violations.append(f"completion: given {g.etype.value} at {g.box} missing or moved")
    elif kind is TaskKind.RELATIONSHIP:
        els = layout.elements
        for i, rel, j in task.relations:
            if i >= len(els) or j >= len(els):
                violations.append(f"relation: element {i} {rel} element {j} refers to a missing element")
            elif not _relation_holds(els[i], rel, els[j]):
                violations.append(f"relation: element {i} {rel} element {j} does not hold")
    return violations


# ---------------------------------------------------------------------------
# clustering


def layout_similarity(a: Layout, b: Layout) -> float:
    """Greedy same-type IoU matching, averaged over the larger layout."""
    size = max(len(a), len(b))
    if size == 0:
        return 1.0
    pairs = sorted(
        ((box_iou(ea.box, eb.box), i, j) for i, ea in enumerate(a) for j, eb in enumerate(b)
         if ea.etype is eb.etype),
        key=lambda p: (-p[0], p[1], p[2]),
    )
    used_a, used_b, total = set(), set(), 0.0
    for iou, i, j in pairs:
        if iou <= 0:
            break
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        total += iou
    return total / size


def cluster_candidates(layouts: Sequence[Layout], eps: float = CLUSTER_EPS) -> list[int]:
    """DBSCAN labels (min_samples=1, so every point gets a cluster)."""
    if not layouts:
        raise ValueError("nothing to cluster")
    n = len(layouts)
    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            dist[i, j] = dist[j, i] = 1.0 - layout_similarity(layouts[i], layouts[j])
    return DBSCAN(eps=eps, min_samples=1, metric="precomputed").fit(dist).labels_.tolist()


# ---------------------------------------------------------------------------
# the loop


@dataclass
class IterationRecord:
    iteration: int
    status: str                      # "ok" or "skipped"
    attempts: int
    requests: int
    suggestions: list[str]
    new: list[int]                   # candidate indices produced this round
    pool: list[int]                  # candidate indices in the pool afterwards
    best_score: float | None


@dataclass
class RunHistory:
    sample_id: str | None
    candidates: list[ScoredCandidate] = field(default_factory=list)
    iterations: list[IterationRecord] = field(default_factory=list)
    usage: Usage = field(default_factory=Usage)
    labels: list[int] | None = None

    @property
    def best(self) -> ScoredCandidate:
        return self.candidates[self.iterations[-1].pool[0]]

    def pool_at(self, iteration: int) -> list[ScoredCandidate]:
        return [self.candidates[i] for i in self.iterations[iteration].pool]

    def best_scores(self) -> list[float]:
        return [rec.best_score for rec in self.iterations]

    def to_records(self) -> list[dict]:
        rows = []
        for rec in self.iterations:
            rows.append({"kind": "iteration", "sample_id": self.sample_id, **rec.__dict__})
        for c in self.candidates:
            rows.append({
                "kind": "candidate",
                "sample_id": self.sample_id,
                "index": c.index,
                "iteration": c.iteration,
                "html": serialize_html(c.layout),
                "metrics": c.report.to_dict(),
                "scores": c.scores.to_dict(),
                "fused": c.fused,
                "score": c.score,
                "violations": list(c.violations),
                "suggestions": self.iterations[c.iteration].suggestions,
                "cluster": None if self.labels is None else self.labels[c.index],
            })
        return rows

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as f:
            for row in self.to_records():
                f.write(json.dumps(row, sort_keys=True) + "\n")


class CandidatePool:
    """Top-k candidates by score, best first; ties keep the earlier candidate."""

    def __init__(self, k: int):
        self.k = k
        self.members: list[ScoredCandidate] = []

    def merge(self, new: Sequence[ScoredCandidate]) -> None:
        merged = sorted(self.members + list(new), key=lambda c: (-c.score, c.index))
        self.members = merged[: self.k]

    @property
    def best(self) -> ScoredCandidate | None:
        return self.members[0] if self.members else None


def score_layout(canvas: CanvasAsset, layout: Layout, cfg: RunConfig,
                 iteration: int = 0, index: int = 0) -> ScoredCandidate:
    report = evaluate(canvas, layout)
    scores = normalize(report, cfg.align_ref)
    fused = fused_score(scores, cfg.weights)
    violations = tuple(validate_constraints(layout, cfg.task))
    return ScoredCandidate(layout, report, scores, fused, violations,
                           score=fused - cfg.violation_penalty * len(violations),
                           iteration=iteration, index=index)


def _generate(backend: Backend, bundle, canvas: CanvasAsset, cfg: RunConfig):
    """Call the model until some completion parses, at most ``cfg.retries`` times.

    Auth errors propagate; other backend errors use up an attempt.
    """
    usage = Usage()
    for attempt in range(1, cfg.retries + 1):
        try:
            resp = backend.complete(bundle.with_params(seed=bundle.seed * 100 + attempt))
        except AuthError:
            raise
        except BackendError as exc:
            usage.add(getattr(exc, "usage", None) or Usage())
            log.warning("backend call failed (attempt %d/%d): %s", attempt, cfg.retries, exc)
            continue
        usage.add(resp.usage)
        layouts = []
        for text in resp.completions:
            try:
                layouts.append(parse_html(text, canvas.dims, cfg.element_types))
            except ParseFailure as exc:
                log.debug("unparsable completion: %s", exc.reason)
        if layouts:
            return layouts, attempt, usage
        log.info("no parsable completion (attempt %d/%d)", attempt, cfg.retries)
    return [], cfg.retries, usage


def run_sample(query: CanvasAsset, index: DatasetIndex, cfg: RunConfig, backend: Backend,
               query_id: str | None = None) -> tuple[Layout, RunHistory]:
    """Generate a layout for ``query`` and refine it for ``cfg.iterations`` rounds."""
    qid = query_id if query_id is not None else query.id
    history = RunHistory(qid)
    temperature = cfg.temperature if cfg.temperature is not None else backend.cfg.temperature

    icl = [s for s, _ in retrieve(index, query, cfg.icl_count, cfg.retrieval, query_id=qid, seed=cfg.seed)]
    if not icl:
        raise SampleFailed(f"no in-context examples available for {qid!r}")
    base = build_initial(query, [(s.canvas, s.layout) for s in icl], cfg.task, temperature=temperature,
                         n=cfg.candidates, seed=cfg.seed, element_types=cfg.element_types)
    thresholds = icl_thresholds([evaluate(s.canvas, s.layout) for s in icl], cfg.align_ref)
    pool = CandidatePool(cfg.pool_size)

    for it in range(cfg.iterations + 1):
        if it == 0:
            suggestions: list[str] = []
            bundle = base
        else:
            suggestions = suggest(pool.best.scores, thresholds)
            bundle = build_refinement(pool.members, suggestions, base, seed=cfg.seed + it)
        layouts, attempts, usage = _generate(backend, bundle, query, cfg)
        history.usage.add(usage)
        new = []
        for layout in layouts:
            cand = score_layout(query, layout, cfg, iteration=it, index=len(history.candidates))
            history.candidates.append(cand)
            new.append(cand)
        if it == 0 and not new:
            raise SampleFailed(f"no parsable layout for {qid!r} after {attempts} attempt(s)")
        pool.merge(new)
        history.iterations.append(IterationRecord(
            iteration=it,
            status="ok" if new else "skipped",
            attempts=attempts,
            requests=usage.requests,
            suggestions=suggestions,
            new=[c.index for c in new],
            pool=[c.index for c in pool.members],
            best_score=pool.best.score,
        ))
    history.labels = cluster_candidates([c.layout for c in history.candidates])
    return pool.best.layout, history
