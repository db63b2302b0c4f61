"""Random layout and canvas generators shared by the tests."""

from __future__ import annotations

import numpy as np

from layoutloop.layout import CanvasAsset, Element, ElementType, Layout


def random_layout(rng: np.random.Generator, W: int, H: int, kmin: int = 2, kmax: int = 8,
                  types=(ElementType.LOGO, ElementType.TEXT, ElementType.UNDERLAY)) -> Layout:
    """Integer-coordinate boxes that fit the canvas."""
    els = []
    for _ in range(int(rng.integers(kmin, kmax + 1))):
        w = int(rng.integers(1, W + 1))
        h = int(rng.integers(1, H + 1))
        l = int(rng.integers(0, W - w + 1))
        t = int(rng.integers(0, H - h + 1))
        els.append(Element(types[int(rng.integers(len(types)))], l, t, w, h))
    return Layout(tuple(els), W, H)


def random_canvas(rng: np.random.Generator, W: int, H: int) -> CanvasAsset:
    image = rng.integers(0, 256, (H, W, 3)).astype(np.uint8)
    saliency = rng.integers(0, 256, (H, W)) / 255.0
    return CanvasAsset(image, saliency)


def _fits(box, W, H):
    l, t, w, h = box
    return w >= 1 and h >= 1 and l >= 0 and t >= 0 and l + w <= W and t + h <= H


def _disjoint(a, b):
    return a[0] + a[2] <= b[0] or b[0] + b[2] <= a[0] or a[1] + a[3] <= b[1] or b[1] + b[3] <= a[1]


def inject_violation(layout: Layout, task, rng: np.random.Generator):
    """Break ``layout`` against ``task`` in one known way.

    Returns ``(mutated, expected)`` where ``expected`` lists exact violation
    messages, or message prefixes ending in ``*`` when the matcher may report
    any of several equivalent specs. Returns ``None`` if no mutation applies.
    """
    kind = task.kind.value
    W, H = layout.dims
    els = list(layout.elements)
    if kind == "c2sp":
        counts = dict(task.counts)
        t = els[int(rng.integers(len(els)))].etype
        if rng.random() < 0.5:
            drop = next(i for i, e in enumerate(els) if e.etype is t)
            mutated = layout.replace(els[:drop] + els[drop + 1:])
            got = counts[t] - 1
        else:
            mutated = layout.replace(els + [Element(t, 0, 0, 1, 1)])
            got = counts[t] + 1
        return mutated, [f"count: expected {counts[t]} {t.value}, got {got}"]
    if kind == "cs2p":
        i = int(rng.integers(len(els)))
        e = els[i]
        specs = [(w, h) for t, w, h in task.sizes if t is e.etype]
        for w in range(1, W + 1):
            if all(abs(w - sw) > 5 for sw, _ in specs):
                els[i] = e.with_box((0, e.top, w, e.height))
                return layout.replace(els), [f"size: no {e.etype.value} of width*"]
        return None
    if kind == "completion":
        given = list(task.given)
        for i in rng.permutation(len(given)):
            g = given[int(i)]
            twins = [e for e in els if e.etype is g.etype and e is not g
                     and all(abs(x - y) <= 4 for x, y in zip(e.box, g.box))]
            if twins:
                continue
            j = els.index(g)
            for dx in (3, -3):
                box = (g.left + dx, g.top, g.width, g.height)
                if _fits(box, W, H):
                    els[j] = g.with_box(box)
                    return layout.replace(els), [f"completion: given {g.etype.value} at {g.box} missing or moved"]
        return None
    if kind == "relationship":
        for i, rel, j in task.relations:
            a, b = els[i], els[j]
            if rel in ("above", "below", "left-of", "right-of", "larger-than", "smaller-than"):
                if a.box == b.box:
                    continue
                els[i], els[j] = a.with_box(b.box), b.with_box(a.box)
            elif rel == "equal-size":
                box = (0, 0, min(W, a.width * 2), a.height) if a.width * 2 <= W else (0, 0, max(1, a.width // 2), a.height)
                if abs(box[2] * box[3] - b.area) <= 0.05 * max(box[2] * box[3], b.area):
                    continue
                els[i] = a.with_box(box)
            elif rel == "overlaps":
                spots = [(x, y, a.width, a.height) for x in (0, W - a.width) for y in (0, H - a.height)]
                free = [s for s in spots if _fits(s, W, H) and _disjoint(s, b.box)]
                if not free:
                    continue
                els[i] = a.with_box(free[0])
            return layout.replace(els), [f"relation: element {i} {rel} element {j} does not hold"]
        return None
    return layout, []


def violations_match(found, expected) -> bool:
    if len(found) != len(expected):
        return False
    return all(f.startswith(x[:-1]) if x.endswith("*") else f == x for f, x in zip(found, expected))
