"""Axis-aligned rectangle arithmetic on the continuous image plane.

Boxes are real-valued (no pixel snapping) and may extend beyond any image
bounds; nothing here clips.  The coordinate convention throughout the
package: ``(x, y)`` is the top-left corner, ``y`` grows downward, and the
box center sits at ``(x + w/2, y + h/2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RectBox",
    "intersect_area",
    "iou",
    "iou_offset_square",
    "iou_xywh",
]


@dataclass(frozen=True)
class RectBox:
    """An axis-aligned rectangle: top-left corner ``(x, y)``, size ``w x h``.

    Degenerate sizes (``w <= 0`` or ``h <= 0``) and non-finite coordinates
    are rejected at construction so corrupt annotations fail fast instead
    of silently skewing statistics.
    """

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        for name in ("x", "y", "w", "h"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ValueError(f"RectBox.{name} must be a finite real, got {value!r}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(
                f"RectBox requires positive size, got w={self.w!r} h={self.h!r}"
            )

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h

    def translated(self, dx: float, dy: float) -> "RectBox":
        """The same box shifted by ``(dx, dy)``."""
        return RectBox(self.x + dx, self.y + dy, self.w, self.h)


def intersect_area(a: RectBox, b: RectBox) -> float:
    """Area of ``a`` intersected with ``b``; 0 when they are disjoint."""
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    return iw * ih


def iou(a: RectBox, b: RectBox) -> float:
    """Intersection-over-union of two boxes, in [0, 1].

    Symmetric, and exactly 1.0 only for identical boxes.
    """
    inter = intersect_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def iou_offset_square(side: float, dx: float, dy: float) -> float:
    """IoU of two ``side x side`` squares whose centers differ by ``(dx, dy)``.

    This is the closed form for one period of the overlap pattern between a
    square face and its matched same-size anchor:

        (side - dx)(side - dy) / (2*side^2 - (side - dx)(side - dy))

    Offsets must satisfy ``0 <= dx, dy < side`` (the squares still overlap);
    anything else is rejected because the formula has no meaning there.
    """
    if not (side > 0 and math.isfinite(side)):
        raise ValueError(f"side must be positive and finite, got {side!r}")
    if not (0 <= dx < side) or not (0 <= dy < side):
        raise ValueError(
            f"offsets must lie in [0, side): got dx={dx!r} dy={dy!r} for side={side!r}"
        )
    prod = (side - dx) * (side - dy)
    return prod / (2.0 * (side * side) - prod)


def iou_xywh(ax, ay, aw, ah, bx, by, bw, bh):
    """Elementwise IoU for ``(x, y, w, h)`` coordinate arrays.

    Broadcasts like any numpy expression.  Scalar inputs produce a scalar.
    Matches :func:`iou` bit-for-bit on equal inputs, which the accelerated
    matching paths rely on.
    """
    iw = np.minimum(ax + aw, bx + bw) - np.maximum(ax, bx)
    ih = np.minimum(ay + ah, by + bh) - np.maximum(ay, by)
    inter = np.where((iw > 0.0) & (ih > 0.0), iw * ih, 0.0)
    union = aw * ah + bw * bh - inter
    return np.where(inter > 0.0, inter / union, 0.0)
