"""Dataset loading and saliency-similarity retrieval of in-context examples.

A split directory looks like::

    images/{id}.png        (or .jpg)
    saliency/{id}.png
    annotations.jsonl      {"id", "canvas_width", "canvas_height", "elements": [...]}

Unannotated splits omit ``elements``.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .layout import SALIENCY_THRESHOLD, CanvasAsset, Layout, box_iou
from .render import load_canvas

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True, eq=False)
class Sample:
    id: str
    canvas: CanvasAsset
    layout: Layout | None


def read_annotations(split_dir: str | Path) -> list[dict]:
    path = Path(split_dir) / "annotations.jsonl"
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                log.warning("%s:%d: bad JSON (%s)", path, lineno, exc)
    return records


def _find_image(split_dir: Path, sid: str) -> Path:
    for suffix in IMAGE_SUFFIXES:
        p = split_dir / "images" / f"{sid}{suffix}"
        if p.exists():
            return p
    raise FileNotFoundError(f"no image for sample {sid!r}")


def load_sample(split_dir: str | Path, record: dict, tau: float = SALIENCY_THRESHOLD) -> Sample:
    split_dir = Path(split_dir)
    sid = str(record["id"])
    canvas = load_canvas(_find_image(split_dir, sid), split_dir / "saliency" / f"{sid}.png", id=sid)
    if canvas.tau != tau:
        canvas = CanvasAsset(canvas.image, canvas.saliency, id=sid, tau=tau)
    dims = (int(record.get("canvas_width", canvas.width)), int(record.get("canvas_height", canvas.height)))
    if dims != canvas.dims:
        raise ValueError(f"sample {sid!r}: annotation says {dims}, image is {canvas.dims}")
    layout = None
    if record.get("elements") is not None:
        layout = Layout.from_dict({**record, "canvas_width": dims[0], "canvas_height": dims[1]})
    return Sample(sid, canvas, layout)


def iter_split(split_dir: str | Path, tau: float = SALIENCY_THRESHOLD,
               errors: list | None = None) -> Iterator[Sample]:
    """Yield loadable samples; failures are logged and appended to ``errors``."""
    for record in read_annotations(split_dir):
        try:
            yield load_sample(split_dir, record, tau)
        except Exception as exc:  # corrupt image, missing file, bad box...
            log.warning("skipping sample %r: %s", record.get("id"), exc)
            if errors is not None:
                errors.append((record.get("id"), str(exc)))


@dataclass(frozen=True, eq=False)
class DatasetIndex:
    entries: tuple[Sample, ...]
    bitmaps: np.ndarray = field(repr=False)   # (N, H, W) bool
    bboxes: tuple[tuple, ...] = field(repr=False)
    tau: float = SALIENCY_THRESHOLD

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate ids in index")
        if not ids:
            raise ValueError("empty index")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> list[str]:
        return [e.id for e in self.entries]

    def get(self, sid: str) -> Sample:
        for e in self.entries:
            if e.id == sid:
                return e
        raise KeyError(sid)

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], tau: float = SALIENCY_THRESHOLD) -> "DatasetIndex":
        samples = tuple(samples)
        if not samples:
            raise ValueError("index build failed: no valid samples")
        dims = {s.canvas.dims for s in samples}
        if len(dims) > 1:
            raise ValueError(f"samples disagree on canvas size: {sorted(dims)}")
        bitmaps = np.stack([s.canvas.saliency >= tau for s in samples])
        bitmaps.setflags(write=False)
        return cls(samples, bitmaps, tuple(s.canvas.saliency_bbox for s in samples), tau)

    def save(self, path: str | Path) -> None:
        records = [{"id": s.id, "layout": None if s.layout is None else s.layout.to_dict()}
                   for s in self.entries]
        np.savez_compressed(
            path,
            images=np.stack([s.canvas.image for s in self.entries]),
            saliency=np.stack([s.canvas.saliency for s in self.entries]),
            meta=np.array(json.dumps({"tau": self.tau, "records": records})),
        )

    @classmethod
    def load(cls, path: str | Path) -> "DatasetIndex":
        with np.load(path) as data:
            meta = json.loads(str(data["meta"]))
            images, saliency = data["images"], data["saliency"]
            tau = meta["tau"]
            samples = [
                Sample(r["id"], CanvasAsset(images[i], saliency[i], id=r["id"], tau=tau),
                       None if r["layout"] is None else Layout.from_dict(r["layout"]))
                for i, r in enumerate(meta["records"])
            ]
        return cls.from_samples(samples, tau)


def build_index(dataset_dir: str | Path, tau: float = SALIENCY_THRESHOLD,
                require_layout: bool = True) -> DatasetIndex:
    """Load every sample of a split and precompute binarized saliency."""
    samples = []
    for s in iter_split(dataset_dir, tau):
        if require_layout and s.layout is None:
            log.warning("skipping unannotated sample %r", s.id)
            continue
        samples.append(s)
    return DatasetIndex.from_samples(samples, tau)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def _resize_mask(mask: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if mask.shape == shape:
        return mask
    rows = (np.arange(shape[0]) * mask.shape[0] // shape[0])
    cols = (np.arange(shape[1]) * mask.shape[1] // shape[1])
    return mask[rows][:, cols]


def similarities(index: DatasetIndex, query: CanvasAsset, mode: str = "iou") -> np.ndarray:
    """Similarity of the query to every index entry.

    ``iou`` compares binarized saliency maps pixelwise; ``bbox`` compares
    their bounding boxes, which is cheaper.
    """
    if mode == "bbox":
        qb = query.saliency_bbox
        return np.array([box_iou(qb, b) for b in index.bboxes])
    if mode == "dreamsim":
        raise NotImplementedError("embedding retrieval needs a pretrained DreamSim model; use 'iou' or 'bbox'")
    if mode != "iou":
        raise ValueError(f"unknown similarity mode {mode!r}")
    q = _resize_mask(query.saliency >= index.tau, index.bitmaps.shape[1:])
    inter = np.count_nonzero(index.bitmaps & q, axis=(1, 2))
    union = np.count_nonzero(index.bitmaps | q, axis=(1, 2))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union == 0, 1.0, inter / np.maximum(union, 1))


def retrieve(index: DatasetIndex, query: CanvasAsset, m: int, mode: str = "iou",
             query_id: str | None = None, seed: int | None = None) -> list[tuple[Sample, float]]:
    """Top-``m`` index entries by saliency similarity to ``query``.

    Sorted by similarity descending, ties by ascending id. The query itself
    (matched on ``query_id`` or ``query.id``) is never returned. ``mode`` is
    ``iou``, ``bbox`` or ``random``.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    qid = query_id if query_id is not None else query.id
    if mode == "random":
        pool = [e for e in index.entries if e.id != qid]
        rng = random.Random(seed)
        picked = rng.sample(pool, min(m, len(pool)))
        return [(e, float("nan")) for e in picked]
    sims = similarities(index, query, mode)
    order = sorted(
        (i for i, e in enumerate(index.entries) if e.id != qid),
        key=lambda i: (-sims[i], index.entries[i].id),
    )
    if m > len(order):
        log.warning("asked for %d examples but only %d are available", m, len(order))
    return [(index.entries[i], float(sims[i])) for i in order[:m]]
