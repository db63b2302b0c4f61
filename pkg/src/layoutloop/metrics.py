"""Per-layout quality metrics and a distribution-level Frechet proxy.

Lower is better for occlusion, unreadability, overlay and non-alignment;
higher is better for underlay effectiveness.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .layout import CanvasAsset, ElementType, Layout, box_contains, box_iou
from .render import union_mask

METRIC_NAMES = ("occ", "rea", "align", "und", "ove")


@dataclass(frozen=True)
class MetricReport:
    occ: float = 0.0
    rea: float = 0.0
    align: float = 0.0
    und: float = 0.0
    ove: float = 0.0
    rea_valid: bool = True
    und_valid: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


def _masked_mean(values: np.ndarray, mask: np.ndarray) -> float:
    count = int(mask.sum())
    if count == 0:
        return 0.0
    # fsum is correctly rounded, so the result does not depend on summation order
    return math.fsum(values[mask].tolist()) / count


def occlusion(canvas: CanvasAsset, layout: Layout) -> float:
    """Mean saliency over the union of all element boxes."""
    if not layout.elements:
        return 0.0
    mask = union_mask((e.box for e in layout.elements), canvas.width, canvas.height)
    return _masked_mean(canvas.saliency, mask)


def unreadability(canvas: CanvasAsset, layout: Layout) -> float:
    """Mean gradient magnitude over the union of text boxes (0 without text)."""
    texts = layout.of_type(ElementType.TEXT)
    if not texts:
        return 0.0
    mask = union_mask((e.box for e in texts), canvas.width, canvas.height)
    return _masked_mean(canvas.gradient, mask)


def overlay(layout: Layout) -> float:
    """Mean IoU over all pairs of non-underlay elements."""
    boxes = [e.box for e in layout.elements if e.etype is not ElementType.UNDERLAY]
    if len(boxes) < 2:
        return 0.0
    ious = [box_iou(a, b) for a, b in itertools.combinations(boxes, 2)]
    return math.fsum(ious) / len(ious)


def _alignment_lines(layout: Layout) -> np.ndarray:
    """(K, 6) normalized x-lines then y-lines: left, x-center, right, top, y-center, bottom."""
    W, H = layout.canvas_width, layout.canvas_height
    rows = []
    for e in layout.elements:
        l, t, w, h = e.left / W, e.top / H, e.width / W, e.height / H
        rows.append((l, l + w / 2, l + w, t, t + h / 2, t + h))
    return np.array(rows, dtype=np.float64).reshape(-1, 6)


def non_alignment(layout: Layout) -> float:
    """Average of -log(1 - d_i), d_i being element i's closest line match to any other element."""
    k = len(layout)
    if k < 2:
        return 0.0
    lines = _alignment_lines(layout)
    # diff[i, j, a] = |line_a(i) - line_a(j)|
    diff = np.abs(lines[:, None, :] - lines[None, :, :])
    diff[np.arange(k), np.arange(k), :] = np.inf
    d = diff.min(axis=(1, 2))
    return float(np.mean(-np.log1p(-np.minimum(d, 1.0 - 1e-12))))


def underlay_effectiveness(layout: Layout) -> tuple[float, bool]:
    """(valid underlays / underlays, defined?)."""
    underlays = layout.of_type(ElementType.UNDERLAY)
    if not underlays:
        return 0.0, False
    others = [e for e in layout.elements if e.etype is not ElementType.UNDERLAY]
    valid = sum(1 for u in underlays if any(box_contains(u.box, o.box) for o in others))
    return valid / len(underlays), True


def evaluate(canvas: CanvasAsset, layout: Layout) -> MetricReport:
    und, und_valid = underlay_effectiveness(layout)
    return MetricReport(
        occ=occlusion(canvas, layout),
        rea=unreadability(canvas, layout),
        align=non_alignment(layout),
        und=und,
        ove=overlay(layout),
        rea_valid=bool(layout.of_type(ElementType.TEXT)),
        und_valid=und_valid,
    )


# ---------------------------------------------------------------------------
# Frechet proxy

FEATURE_DIM = 10
RIDGE = 1e-6


def _union_area(boxes: Sequence[tuple]) -> float:
    """Exact area of a union of rectangles by coordinate compression."""
    if not boxes:
        return 0.0
    xs = sorted({v for l, t, w, h in boxes for v in (l, l + w)})
    ys = sorted({v for l, t, w, h in boxes for v in (t, t + h)})
    covered = np.zeros((len(ys) - 1, len(xs) - 1), dtype=bool)
    xi = {v: i for i, v in enumerate(xs)}
    yi = {v: i for i, v in enumerate(ys)}
    for l, t, w, h in boxes:
        covered[yi[t]:yi[t + h], xi[l]:xi[l + w]] = True
    cell = np.outer(np.diff(ys), np.diff(xs))
    return float(cell[covered].sum())


def layout_feature(layout: Layout) -> np.ndarray:
    """Fixed-size geometric descriptor of a layout."""
    W, H = layout.canvas_width, layout.canvas_height
    k = len(layout)
    feat = np.zeros(FEATURE_DIM)
    feat[0] = k
    if k:
        boxes = np.array([e.box for e in layout.elements], dtype=np.float64)
        norm = boxes / np.array([W, H, W, H])
        feat[1:5] = norm.mean(axis=0)
        feat[5] = (norm[:, 2] * norm[:, 3]).mean()
        feat[6] = _union_area([e.box for e in layout.elements]) / (W * H)
    feat[7] = len(layout.of_type(ElementType.LOGO))
    feat[8] = len(layout.of_type(ElementType.TEXT))
    feat[9] = len(layout.of_type(ElementType.UNDERLAY))
    return feat


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def gaussian_frechet(mu1, sigma1, mu2, sigma2) -> float:
    """Squared Frechet distance between two Gaussians.

    Tr((S1 S2)^(1/2)) is taken as Tr((S1^(1/2) S2 S1^(1/2))^(1/2)), which is
    symmetric PSD, so everything goes through ``eigh`` with negative
    eigenvalues clipped.
    """
    s1_half = _psd_sqrt(sigma1)
    inner = s1_half @ sigma2 @ s1_half
    vals = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_cross = np.sqrt(np.clip(vals, 0.0, None)).sum()
    diff = np.asarray(mu1) - np.asarray(mu2)
    return float(diff @ diff + np.trace(sigma1) + np.trace(sigma2) - 2.0 * tr_cross)


def feature_stats(layouts: Sequence[Layout]) -> tuple[np.ndarray, np.ndarray]:
    if len(layouts) < 2:
        raise ValueError(f"need at least 2 layouts per set, got {len(layouts)}")
    feats = np.stack([layout_feature(l) for l in layouts])
    return feats.mean(axis=0), np.cov(feats, rowvar=False) + RIDGE * np.eye(FEATURE_DIM)


def frechet_proxy(set_a: Sequence[Layout], set_b: Sequence[Layout]) -> float:
    mu1, s1 = feature_stats(set_a)
    mu2, s2 = feature_stats(set_b)
    # average both orderings so the value is symmetric to rounding
    d = 0.5 * (gaussian_frechet(mu1, s1, mu2, s2) + gaussian_frechet(mu2, s2, mu1, s1))
    return max(d, 0.0)


# ---------------------------------------------------------------------------
# Batch reports


def aggregate(reports: Sequence[MetricReport]) -> dict[str, float | None]:
    """Dataset-level means; rea/und average only over samples where defined."""
    out: dict[str, float | None] = {}
    for name in METRIC_NAMES:
        if name == "und":
            vals = [r.und for r in reports if r.und_valid]
        else:
            vals = [getattr(r, name) for r in reports]
        out[name] = math.fsum(vals) / len(vals) if vals else None
    return out


def write_reports(out_dir: str | Path, rows: Sequence[tuple[str, MetricReport]],
                  frechet: float | None = None, extra: dict | None = None) -> dict:
    """Write ``metrics.csv`` and ``metrics.json`` (per-sample rows plus an aggregate)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    agg = aggregate([r for _, r in rows])
    with open(out_dir / "metrics.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", *METRIC_NAMES, "frechet_proxy"])
        for sid, r in rows:
            writer.writerow([sid, *(getattr(r, n) if n != "und" or r.und_valid else "" for n in METRIC_NAMES), ""])
        writer.writerow(["aggregate", *("" if agg[n] is None else agg[n] for n in METRIC_NAMES),
                         "" if frechet is None else frechet])
    payload = {
        "samples": [{"sample_id": sid, **r.to_dict()} for sid, r in rows],
        "aggregate": {**agg, "frechet_proxy": frechet, "count": len(rows)},
        **(extra or {}),
    }
    (out_dir / "metrics.json").write_text(json.dumps(payload, indent=2))
    return payload
