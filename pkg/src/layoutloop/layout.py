"""Layout domain types and the HTML layout grammar.

Coordinates are pixels on the canvas, origin at the top-left corner with y
pointing down. A box is a ``(left, top, width, height)`` tuple.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

DEFAULT_CANVAS = (513, 750)
SALIENCY_THRESHOLD = 0.5

Box = tuple[float, float, float, float]


class ElementType(str, enum.Enum):
    LOGO = "logo"
    TEXT = "text"
    UNDERLAY = "underlay"
    EMBELLISHMENT = "embellishment"

    @classmethod
    def parse(cls, name: str) -> "ElementType":
        return cls(name.strip().lower())


# PKU declares three types; CGL adds embellishment.
PKU_TYPES = (ElementType.LOGO, ElementType.TEXT, ElementType.UNDERLAY)
CGL_TYPES = PKU_TYPES + (ElementType.EMBELLISHMENT,)


class ParseFailure(ValueError):
    """Raised when model output contains no usable layout element."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def clamp_box(box: Sequence[float], canvas_width: int, canvas_height: int) -> Box | None:
    """Intersect ``box`` with the canvas; ``None`` when nothing is left."""
    left, top, width, height = box
    x0, y0 = max(0.0, left), max(0.0, top)
    x1 = min(float(canvas_width), left + width)
    y1 = min(float(canvas_height), top + height)
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        return None
    # keep ints as ints so clamping an integer box is a no-op on types too
    vals = [x0, y0, x1 - x0, y1 - y0]
    return tuple(int(v) if float(v).is_integer() else v for v in vals)  # type: ignore[return-value]


def box_iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection over union of two ``(l, t, w, h)`` boxes."""
    al, at, aw, ah = a
    bl, bt, bw, bh = b
    iw = min(al + aw, bl + bw) - max(al, bl)
    ih = min(at + ah, bt + bh) - max(at, bt)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return float(inter / union)


def box_contains(outer: Sequence[float], inner: Sequence[float]) -> bool:
    ol, ot, ow, oh = outer
    il, it, iw, ih = inner
    return ol <= il and ot <= it and il + iw <= ol + ow and it + ih <= ot + oh


@dataclass(frozen=True)
class Element:
    etype: ElementType
    left: float
    top: float
    width: float
    height: float

    def __post_init__(self):
        if not isinstance(self.etype, ElementType):
            object.__setattr__(self, "etype", ElementType.parse(self.etype))
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"element needs positive size, got {self.width}x{self.height}")

    @property
    def box(self) -> Box:
        return (self.left, self.top, self.width, self.height)

    @property
    def right(self) -> float:
        return self.left + self.width

    @property
    def bottom(self) -> float:
        return self.top + self.height

    @property
    def area(self) -> float:
        return self.width * self.height

    def with_box(self, box: Sequence[float]) -> "Element":
        return Element(self.etype, *box)

    def clamped(self, canvas_width: int, canvas_height: int) -> "Element | None":
        box = clamp_box(self.box, canvas_width, canvas_height)
        return None if box is None else self.with_box(box)

    def rounded(self, canvas_width: int, canvas_height: int) -> "Element":
        """Integer coordinates, kept at least 1 px wide and inside the canvas."""
        left = min(max(round_half_up(self.left), 0), canvas_width - 1)
        top = min(max(round_half_up(self.top), 0), canvas_height - 1)
        width = min(max(round_half_up(self.width), 1), canvas_width - left)
        height = min(max(round_half_up(self.height), 1), canvas_height - top)
        return Element(self.etype, left, top, width, height)

    def to_dict(self) -> dict:
        return {"type": self.etype.value, "left": self.left, "top": self.top,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "Element":
        return cls(ElementType.parse(d["type"]), d["left"], d["top"], d["width"], d["height"])


@dataclass(frozen=True)
class Layout:
    elements: tuple[Element, ...]
    canvas_width: int = DEFAULT_CANVAS[0]
    canvas_height: int = DEFAULT_CANVAS[1]

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        for e in self.elements:
            if e.left < 0 or e.top < 0 or e.right > self.canvas_width or e.bottom > self.canvas_height:
                raise ValueError(f"{e} lies outside the {self.canvas_width}x{self.canvas_height} canvas")

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    @property
    def dims(self) -> tuple[int, int]:
        return (self.canvas_width, self.canvas_height)

    def of_type(self, *etypes: ElementType) -> list[Element]:
        return [e for e in self.elements if e.etype in etypes]

    def replace(self, elements: Iterable[Element]) -> "Layout":
        return Layout(tuple(elements), self.canvas_width, self.canvas_height)

    def rounded(self) -> "Layout":
        return self.replace(e.rounded(*self.dims) for e in self.elements)

    def to_dict(self) -> dict:
        return {"canvas_width": self.canvas_width, "canvas_height": self.canvas_height,
                "elements": [e.to_dict() for e in self.elements]}

    @classmethod
    def from_dict(cls, d: dict) -> "Layout":
        return cls(tuple(Element.from_dict(e) for e in d.get("elements") or ()),
                   int(d["canvas_width"]), int(d["canvas_height"]))


def saliency_bbox(saliency: np.ndarray, tau: float = SALIENCY_THRESHOLD) -> Box:
    """Tightest box around saliency pixels >= tau; the full canvas if none are."""
    height, width = saliency.shape
    ys, xs = np.nonzero(saliency >= tau)
    if len(xs) == 0:
        return (0, 0, width, height)
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    return (x0, y0, x1 - x0, y1 - y0)


@dataclass(frozen=True, eq=False)
class CanvasAsset:
    """A background image with its saliency map.

    ``image`` is ``uint8`` of shape ``(H, W, 3)``; ``saliency`` is float in
    ``[0, 1]`` of shape ``(H, W)``.
    """

    image: np.ndarray
    saliency: np.ndarray
    id: str | None = None
    tau: float = SALIENCY_THRESHOLD
    saliency_bbox: Box = field(init=False)

    def __post_init__(self):
        image = np.asarray(self.image)
        if image.ndim == 2:
            image = np.repeat(image[:, :, None], 3, axis=2)
        if image.dtype != np.uint8:
            image = np.clip(np.rint(image), 0, 255).astype(np.uint8)
        saliency = np.asarray(self.saliency, dtype=np.float64)
        if saliency.shape != image.shape[:2]:
            raise ValueError(f"saliency {saliency.shape} does not match image {image.shape[:2]}")
        if saliency.size and (saliency.min() < 0 or saliency.max() > 1):
            raise ValueError("saliency values must lie in [0, 1]")
        image.setflags(write=False)
        saliency.setflags(write=False)
        object.__setattr__(self, "image", image)
        object.__setattr__(self, "saliency", saliency)
        object.__setattr__(self, "saliency_bbox", saliency_bbox(saliency, self.tau))

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        return (self.width, self.height)

    @cached_property
    def gradient(self) -> np.ndarray:
        from .render import gradient_field

        return gradient_field(self.image)

    @cached_property
    def saliency_mask(self) -> np.ndarray:
        return self.saliency >= self.tau


# ---------------------------------------------------------------------------
# HTML grammar

_DIV_TEMPLATE = '<div class="{cls}" style="left: {l}px; top: {t}px; width: {w}px; height: {h}px"></div>'


def element_html(e: Element, canvas_width: int, canvas_height: int) -> str:
    r = e.rounded(canvas_width, canvas_height)
    return _DIV_TEMPLATE.format(cls=r.etype.value, l=r.left, t=r.top, w=r.width, h=r.height)


def serialize_html(layout: Layout) -> str:
    lines = ["<html>", "<body>",
             _DIV_TEMPLATE.format(cls="canvas", l=0, t=0, w=layout.canvas_width, h=layout.canvas_height)]
    lines.extend(element_html(e, *layout.dims) for e in layout.elements)
    lines.extend(["</body>", "</html>"])
    return "\n".join(lines)


_DIV_RE = re.compile(r"<div\b([^>]*)>", re.IGNORECASE)
_ATTR_RE = re.compile(r"""([a-zA-Z_:][-\w:.]*)\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s>]+))""")
_STYLE_RE = re.compile(r"(left|top|width|height)\s*:\s*(-?\d+(?:\.\d+)?)\s*px", re.IGNORECASE)


def _div_attributes(attr_text: str) -> dict[str, str]:
    attrs = {}
    for m in _ATTR_RE.finditer(attr_text):
        value = next(v for v in m.groups()[1:] if v is not None)
        attrs.setdefault(m.group(1).lower(), value)
    return attrs


def parse_html(text: str, canvas_dims: tuple[int, int] = DEFAULT_CANVAS,
               allowed: Sequence[ElementType] = tuple(ElementType)) -> Layout:
    """Extract a layout from free-form model output.

    Every ``div`` whose class names a known element type and whose style
    carries all four of left/top/width/height in px is kept, clamped to the
    canvas. Other divs (including the canvas div) are skipped. Raises
    :class:`ParseFailure` when nothing usable is found.
    """
    width, height = canvas_dims
    known = {t.value: t for t in allowed}
    elements = []
    skipped = 0
    for m in _DIV_RE.finditer(text):
        attrs = _div_attributes(m.group(1))
        classes = attrs.get("class", "").lower().split()
        etype = next((known[c] for c in classes if c in known), None)
        if etype is None:
            continue
        fields = {k.lower(): float(v) for k, v in _STYLE_RE.findall(attrs.get("style", ""))}
        if len(fields) < 4:
            skipped += 1
            continue
        if fields["width"] <= 0 or fields["height"] <= 0:
            skipped += 1
            continue
        box = clamp_box((fields["left"], fields["top"], fields["width"], fields["height"]), width, height)
        if box is None:
            skipped += 1
            continue
        elements.append(Element(etype, *box))
    if not elements:
        reason = "no layout div found" if not skipped else f"{skipped} malformed layout div(s), none usable"
        raise ParseFailure(reason)
    return Layout(tuple(elements), width, height)
