"""Normalized scores, the fused ranking score, ICL thresholds and suggestions."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

from .layout import Layout
from .metrics import MetricReport

# Order shared by weights, thresholds and suggestion output.
SCORE_ORDER = ("occ", "rea", "ove", "align", "und")
ALIGN_REF = 0.05

SUGGESTIONS = {
    "occ": "Move elements away from the salient object to reduce occlusion.",
    "rea": "Place text elements over flat, low-detail regions to improve readability.",
    "ove": "Reduce the overlap between elements.",
    "align": "Align elements along shared edges or centers.",
    "und": "Ensure each underlay fully contains its associated elements.",
}
SUGGESTION_KEYS = {text: key for key, text in SUGGESTIONS.items()}


@dataclass(frozen=True)
class Scores:
    """Per-metric scores in [0, 1], larger is better."""

    occ: float = 1.0
    rea: float = 1.0
    ove: float = 1.0
    align: float = 1.0
    und: float = 1.0

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, k) for k in SCORE_ORDER)

    def to_dict(self) -> dict:
        return asdict(self)


# Thresholds live in the same normalized space as the scores they gate.
Thresholds = Scores


@dataclass(frozen=True)
class ScoreWeights:
    occ: float = 0.4
    rea: float = 0.4
    ove: float = 0.1
    align: float = 0.0
    und: float = 0.1

    def __post_init__(self):
        vals = [getattr(self, f.name) for f in fields(self)]
        if any(v < 0 for v in vals) or sum(vals) <= 0:
            raise ValueError(f"weights must be non-negative with a positive sum: {vals}")

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, k) for k in SCORE_ORDER)

    def scaled(self, factor: float) -> "ScoreWeights":
        return ScoreWeights(*(factor * w for w in self.as_tuple()))

    @classmethod
    def from_mapping(cls, d: dict) -> "ScoreWeights":
        return cls(**{k: float(v) for k, v in d.items()})


def normalize(report: MetricReport, align_ref: float = ALIGN_REF) -> Scores:
    return Scores(
        occ=1.0 - report.occ,
        rea=1.0 - report.rea,
        ove=1.0 - report.ove,
        align=1.0 - min(report.align / align_ref, 1.0),
        und=report.und if report.und_valid else 1.0,
    )


def fused_score(scores: Scores, weights: ScoreWeights = ScoreWeights()) -> float:
    # correctly rounded, so the result never exceeds the weight sum and is monotone in each score
    return math.fsum(w * f for w, f in zip(weights.as_tuple(), scores.as_tuple()))


def icl_thresholds(icl_reports: Sequence[MetricReport], align_ref: float = ALIGN_REF) -> Thresholds:
    if not icl_reports:
        raise ValueError("thresholds need at least one ICL example")
    normed = [normalize(r, align_ref).as_tuple() for r in icl_reports]
    n = len(normed)
    return Thresholds(*(math.fsum(col) / n for col in zip(*normed)))


def suggest(scores: Scores, thresholds: Thresholds) -> list[str]:
    return [SUGGESTIONS[k] for k in SCORE_ORDER if getattr(scores, k) < getattr(thresholds, k)]


@dataclass(frozen=True, eq=False)
class ScoredCandidate:
    """A parsed candidate with its metrics.

    ``fused`` is the weighted score; ``score`` is what the pool ranks by,
    i.e. ``fused`` minus the constraint-violation penalty.
    """

    layout: Layout
    report: MetricReport
    scores: Scores
    fused: float
    violations: tuple[str, ...] = ()
    score: float | None = None
    iteration: int = 0
    index: int = 0

    def __post_init__(self):
        if self.score is None:
            object.__setattr__(self, "score", self.fused)
