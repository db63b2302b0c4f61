"""Training-free poster layout generation with a self-correcting vision-language model loop."""

from .layout import CanvasAsset, Element, ElementType, Layout, ParseFailure, box_iou, parse_html, serialize_html

__all__ = [
    "CanvasAsset",
    "Element",
    "ElementType",
    "Layout",
    "ParseFailure",
    "box_iou",
    "parse_html",
    "serialize_html",
]

__version__ = "0.1.0"
