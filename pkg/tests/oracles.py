"""Slow, independent reference implementations used as test oracles.

Everything here works on integer-coordinate boxes and walks pixels or pairs
one at a time; nothing is shared with the package's vectorized code paths.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

LUMA_MILLI = (299, 587, 114)


def box_pixels(box) -> set[tuple[int, int]]:
    l, t, w, h = (int(v) for v in box)
    return {(x, y) for y in range(t, t + h) for x in range(l, l + w)}


def grid_iou(a, b) -> Fraction:
    pa, pb = box_pixels(a), box_pixels(b)
    return Fraction(len(pa & pb), len(pa | pb))


def masked_mean(field: np.ndarray, pixels: set) -> float:
    """Exact sum of the covered pixel values, rounded once, then divided by the count."""
    if not pixels:
        return 0.0
    total = sum(Fraction(float(field[y, x])) for x, y in pixels)
    return float(total) / len(pixels)


def occlusion(saliency: np.ndarray, boxes) -> float:
    covered: set = set()
    for b in boxes:
        covered |= box_pixels(b)
    return masked_mean(saliency, covered)


def sobel_field(image: np.ndarray) -> np.ndarray:
    """Per-pixel 3x3 Sobel magnitude of the luma of an 8-bit RGB image, replicated borders.

    Luma is kept as an exact integer (weights scaled by 1000) until the final
    normalization by the largest attainable response.
    """
    img = np.asarray(image)
    H, W = img.shape[:2]
    gray = [[sum(c * int(img[y, x, k]) for k, c in enumerate(LUMA_MILLI)) for x in range(W)] for y in range(H)]

    def g(y, x):
        return gray[min(max(y, 0), H - 1)][min(max(x, 0), W - 1)]

    out = np.zeros((H, W))
    for y in range(H):
        for x in range(W):
            gx = (g(y - 1, x + 1) + 2 * g(y, x + 1) + g(y + 1, x + 1)
                  - g(y - 1, x - 1) - 2 * g(y, x - 1) - g(y + 1, x - 1))
            gy = (g(y + 1, x - 1) + 2 * g(y + 1, x) + g(y + 1, x + 1)
                  - g(y - 1, x - 1) - 2 * g(y - 1, x) - g(y - 1, x + 1))
            # the largest |(gx, gy)| a [0, 1] image can produce is |(4, 2)|
            out[y, x] = min(math.sqrt((gx * gx + gy * gy) / (20 * 255000 ** 2)), 1.0)
    return out


def overlay(typed_boxes) -> Fraction:
    boxes = [b for t, b in typed_boxes if t != "underlay"]
    pairs = [(i, j) for i in range(len(boxes)) for j in range(i + 1, len(boxes))]
    if not pairs:
        return Fraction(0)
    return sum((grid_iou(boxes[i], boxes[j]) for i, j in pairs), Fraction(0)) / len(pairs)


def underlay_effectiveness(typed_boxes):
    unders = [b for t, b in typed_boxes if t == "underlay"]
    others = [b for t, b in typed_boxes if t != "underlay"]
    if not unders:
        return None
    valid = sum(1 for u in unders if any(box_pixels(o) <= box_pixels(u) for o in others))
    return Fraction(valid, len(unders))


def non_alignment(typed_boxes, W: int, H: int) -> float:
    k = len(typed_boxes)
    if k < 2:
        return 0.0

    def lines(b):
        l, t, w, h = b
        return (l / W, (l + w / 2) / W, (l + w) / W, t / H, (t + h / 2) / H, (t + h) / H)

    total = 0.0
    for i in range(k):
        best = math.inf
        for j in range(k):
            if i == j:
                continue
            for a, c in zip(lines(typed_boxes[i][1]), lines(typed_boxes[j][1])):
                best = min(best, abs(a - c))
        total += -math.log(1.0 - min(best, 1.0 - 1e-12))
    return total / k


def frechet(feats_a: np.ndarray, feats_b: np.ndarray, ridge: float = 1e-6) -> float:
    """Closed-form Frechet distance with scipy's general matrix square root."""
    from scipy.linalg import sqrtm

    mu1, mu2 = feats_a.mean(axis=0), feats_b.mean(axis=0)
    d = feats_a.shape[1]
    s1 = np.cov(feats_a, rowvar=False) + ridge * np.eye(d)
    s2 = np.cov(feats_b, rowvar=False) + ridge * np.eye(d)
    cross = sqrtm(s1 @ s2).real
    return float(np.sum((mu1 - mu2) ** 2) + np.trace(s1 + s2 - 2 * cross))
