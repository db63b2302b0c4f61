"""Synthetic poster-like samples for offline runs and tests.

Each canvas is a smooth color gradient with a textured "product" ellipse;
the saliency map marks the ellipse. Ground-truth layouts put a logo and a
headline in the flat band above or below the product and a text-on-underlay
block in the opposite band.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .layout import CanvasAsset, Element, ElementType, Layout
from .retrieval import Sample

SMALL_CANVAS = (103, 150)


def _smooth_noise(rng: np.random.Generator, width: int, height: int, cells: int = 5) -> np.ndarray:
    coarse = rng.uniform(0, 1, (cells, cells))
    im = Image.fromarray((coarse * 255).astype(np.uint8)).resize((width, height), Image.BICUBIC)
    return np.asarray(im, dtype=np.float64) / 255.0


def make_canvas(rng: np.random.Generator, width: int, height: int, id: str | None = None) -> CanvasAsset:
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    top, bottom = rng.uniform(40, 220, 3), rng.uniform(40, 220, 3)
    frac = (ys / max(height - 1, 1))[..., None]
    image = (1 - frac) * top + frac * bottom
    # fine grain whose strength varies over the canvas, so some areas read better
    grain = rng.normal(0, 1, (height, width, 1)) * 18 * _smooth_noise(rng, width, height)[..., None] ** 2
    image = image + grain

    cx = rng.uniform(0.35, 0.65) * width
    cy = rng.uniform(0.35, 0.65) * height
    rx = rng.uniform(0.18, 0.32) * width
    ry = rng.uniform(0.12, 0.22) * height
    r2 = ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2
    inside = r2 <= 1.0
    period = rng.integers(3, 7)
    stripes = ((xs + ys) // period) % 2
    product = np.where(stripes[..., None] > 0, rng.uniform(0, 255, 3), rng.uniform(0, 255, 3))
    image = np.where(inside[..., None], product, image)

    # full saliency on the product, fading out around it
    saliency = np.where(inside, 1.0, np.exp(-3.0 * (np.sqrt(r2) - 1.0)) * 0.45)
    saliency = np.rint(saliency * 255) / 255
    return CanvasAsset(np.clip(np.rint(image), 0, 255).astype(np.uint8), saliency, id=id)


def make_layout(rng: np.random.Generator, canvas: CanvasAsset) -> Layout:
    W, H = canvas.dims
    sl, st, sw, sh = canvas.saliency_bbox
    above, below = (0, st), (st + sh, H)
    bands = [above, below] if rng.random() < 0.5 else [below, above]
    margin = max(1, W // 20)
    els = []

    # band 1: logo + headline
    y0, y1 = bands[0]
    if y1 - y0 >= 12:
        logo = int(rng.integers(max(4, W // 12), max(5, W // 6)))
        logo_h = min(logo, (y1 - y0) // 3)
        els.append(Element(ElementType.LOGO, margin, y0 + 2, logo, max(1, logo_h)))
        head_h = max(3, min(int(rng.integers(H // 18, H // 9)), y1 - y0 - logo_h - 6))
        head_w = int(rng.integers(W // 2, W - 2 * margin))
        els.append(Element(ElementType.TEXT, margin, y0 + logo_h + 4, head_w, head_h))

    # band 2: underlay holding a line of text
    y0, y1 = bands[1]
    if y1 - y0 >= 12:
        und_h = max(6, min(int(rng.integers(H // 12, H // 6)), y1 - y0 - 2))
        und_w = int(rng.integers(W // 3, W - 2 * margin))
        und_x = int(rng.integers(margin, W - margin - und_w + 1))
        und_y = y0 + (y1 - y0 - und_h) // 2
        els.append(Element(ElementType.UNDERLAY, und_x, und_y, und_w, und_h))
        pad = max(1, und_h // 5)
        els.append(Element(ElementType.TEXT, und_x + pad, und_y + pad, und_w - 2 * pad, und_h - 2 * pad))
        if rng.random() < 0.5 and y1 - (und_y + und_h) > 6:
            els.append(Element(ElementType.TEXT, und_x, und_y + und_h + 2, und_w // 2, 3))

    if not els:
        els.append(Element(ElementType.TEXT, 0, 0, W // 2, max(1, H // 20)))
    return Layout(tuple(els), W, H)


def make_sample(rng: np.random.Generator, width: int, height: int, id: str) -> Sample:
    canvas = make_canvas(rng, width, height, id)
    return Sample(id, canvas, make_layout(rng, canvas))


def make_samples(count: int, seed: int = 0, size: tuple[int, int] = SMALL_CANVAS,
                 prefix: str = "s") -> list[Sample]:
    rng = np.random.default_rng(seed)
    return [make_sample(rng, *size, id=f"{prefix}{i:04d}") for i in range(count)]


def write_split(split_dir: str | Path, samples, annotated: bool = True) -> None:
    split_dir = Path(split_dir)
    (split_dir / "images").mkdir(parents=True, exist_ok=True)
    (split_dir / "saliency").mkdir(parents=True, exist_ok=True)
    with open(split_dir / "annotations.jsonl", "w") as f:
        for s in samples:
            Image.fromarray(s.canvas.image).save(split_dir / "images" / f"{s.id}.png")
            sal = np.rint(s.canvas.saliency * 255).astype(np.uint8)
            Image.fromarray(sal).save(split_dir / "saliency" / f"{s.id}.png")
            record = {"id": s.id, "canvas_width": s.canvas.width, "canvas_height": s.canvas.height}
            if annotated and s.layout is not None:
                record["elements"] = [e.to_dict() for e in s.layout]
            f.write(json.dumps(record) + "\n")


def write_dataset(root: str | Path, train: int = 40, test: int = 5, seed: int = 0,
                  size: tuple[int, int] = SMALL_CANVAS) -> Path:
    """Write ``train`` and ``test`` splits under ``root``."""
    root = Path(root)
    write_split(root / "train", make_samples(train, seed, size, prefix="tr"))
    write_split(root / "test", make_samples(test, seed + 1, size, prefix="te"))
    return root
