"""Raster helpers: image I/O, gradient fields, and layout renders."""

from __future__ import annotations

import io
import math
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .layout import CanvasAsset, ElementType, Layout, round_half_up

TYPE_COLORS = {
    ElementType.LOGO: (255, 0, 0),
    ElementType.TEXT: (0, 255, 0),
    ElementType.UNDERLAY: (0, 0, 255),
    ElementType.EMBELLISHMENT: (255, 165, 0),
}
FILL_ALPHA = 0.3
BORDER_WIDTH = 3

LUMA = np.array([0.299, 0.587, 0.114])
LUMA_MILLI = np.array([299, 587, 114], dtype=np.int64)
# Largest |Sobel|^2 over a 3x3 patch with values in [0, 1] (e.g. gx=4, gy=2).
SOBEL_MAX_SQ = 20
SOBEL_MAX = math.sqrt(SOBEL_MAX_SQ)


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def load_saliency(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def load_canvas(image_path: str | Path, saliency_path: str | Path, id: str | None = None) -> CanvasAsset:
    return CanvasAsset(load_image(image_path), load_saliency(saliency_path), id=id)


def save_image(array: np.ndarray, path: str | Path) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        array = np.clip(np.rint(array * 255 if array.max() <= 1 else array), 0, 255).astype(np.uint8)
    Image.fromarray(array).save(path)


def encode_png(array: np.ndarray, max_side: int | None = None) -> bytes:
    """PNG bytes, optionally downscaled so the long side is at most ``max_side``."""
    im = Image.fromarray(np.asarray(array, dtype=np.uint8))
    if max_side and max(im.size) > max_side:
        scale = max_side / max(im.size)
        im = im.resize((max(1, round(im.width * scale)), max(1, round(im.height * scale))), Image.BILINEAR)
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return buf.getvalue()


def box_slices(box, canvas_width: int, canvas_height: int) -> tuple[slice, slice]:
    """Row/column slices of the pixels covered by ``box``.

    A pixel column ``x`` is covered when ``round(left) <= x < round(left + width)``.
    """
    left, top, width, height = box
    x0 = min(max(round_half_up(left), 0), canvas_width)
    x1 = min(max(round_half_up(left + width), 0), canvas_width)
    y0 = min(max(round_half_up(top), 0), canvas_height)
    y1 = min(max(round_half_up(top + height), 0), canvas_height)
    return slice(y0, y1), slice(x0, x1)


def union_mask(boxes, canvas_width: int, canvas_height: int) -> np.ndarray:
    mask = np.zeros((canvas_height, canvas_width), dtype=bool)
    for box in boxes:
        mask[box_slices(box, canvas_width, canvas_height)] = True
    return mask


def gradient_field(image: np.ndarray) -> np.ndarray:
    """Normalized Sobel gradient magnitude of the image's luma, in [0, 1].

    8-bit input is handled in integer arithmetic (luma scaled by 1000), so
    the only rounding is the final division and square root.
    """
    image = np.asarray(image)
    if np.issubdtype(image.dtype, np.integer):
        gray = image[..., :3].astype(np.int64) @ LUMA_MILLI if image.ndim == 3 else image.astype(np.int64) * 1000
        scale = 255 * 1000
    else:
        image = image.astype(np.float64)
        gray = image[..., :3] @ LUMA if image.ndim == 3 else image
        scale = 255
    gx = ndimage.sobel(gray, axis=1, mode="nearest")
    gy = ndimage.sobel(gray, axis=0, mode="nearest")
    sq = (gx * gx + gy * gy).astype(np.float64)
    return np.minimum(np.sqrt(sq / float(SOBEL_MAX_SQ * scale * scale)), 1.0)


def render_layout(canvas: CanvasAsset | np.ndarray, layout: Layout) -> np.ndarray:
    """Draw the layout's boxes over the canvas image.

    Each element becomes a translucent fill plus an opaque border drawn
    inside the box; underlays go first so what sits on them stays visible.
    """
    image = canvas.image if isinstance(canvas, CanvasAsset) else np.asarray(canvas)
    out = image.astype(np.float64).copy()
    height, width = out.shape[:2]
    ordered = sorted(layout.elements, key=lambda e: e.etype is not ElementType.UNDERLAY)
    for e in ordered:
        color = np.array(TYPE_COLORS[e.etype], dtype=np.float64)
        rows, cols = box_slices(e.box, width, height)
        region = out[rows, cols]
        if region.size == 0:
            continue
        region[:] = (1.0 - FILL_ALPHA) * region + FILL_ALPHA * color
        b = BORDER_WIDTH
        region[:b] = color
        region[-b:] = color
        region[:, :b] = color
        region[:, -b:] = color
    return np.rint(out).astype(np.uint8)
