"""Anchor lattices: construction from a declarative spec and periodic queries.

An anchor set is the cross product of scales, aspect ratios, and a regular
grid of center locations.  The grid spacing is the sliding stride
``base_stride / stride_divisor``; per-scale shifted sub-lattices thin the
spacing further (one extra sub-lattice gives quincunx spacing, three give a
half-stride square lattice).  Anchors reaching past the plane edges are
kept uncropped so the lattice stays translation-periodic everywhere, which
all overlap analysis in this package relies on.  This deliberately differs
from detector implementations that discard cross-boundary anchors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .geometry import RectBox

__all__ = [
    "AnchorSpec",
    "AnchorLayout",
    "LatticeGroup",
    "build_layout",
    "effective_anchor_stride",
    "nearest_centers",
    "covering_radius",
]

_ALLOWED_DIVISORS = (1, 2, 4)
_ALLOWED_SHIFT_COUNTS = (0, 1, 3)

# Sub-lattice origins in units of the sliding stride.  One extra anchor sits
# at the bottom-right half-step; three extra anchors fill right, down, and
# bottom-right, halving the spacing.
_SHIFT_PATTERNS: dict[int, tuple[tuple[float, float], ...]] = {
    0: ((0.0, 0.0),),
    1: ((0.0, 0.0), (0.5, 0.5)),
    3: ((0.0, 0.0), (0.5, 0.0), (0.0, 0.5), (0.5, 0.5)),
}


@dataclass(frozen=True)
class AnchorSpec:
    """Declarative anchor design.

    Attributes:
        scales: anchor side lengths in px, strictly ascending, no duplicates.
        ratios: aspect ratios h/w, strictly ascending; a ratio ``r`` scale
            ``s`` anchor measures ``(s/sqrt(r)) x (s*sqrt(r))`` so its area
            stays ``s**2``.
        base_stride: distance between adjacent sliding-window locations
            before any reduction (the feature stride).
        stride_divisor: 1, 2 or 4; divides the stride, modeling a feature
            map enlarged by that factor.
        shifts_per_scale: extra shifted anchors per location for individual
            scales; each count is 0, 1 or 3.
    """

    scales: tuple[float, ...]
    ratios: tuple[float, ...] = (1.0,)
    base_stride: float = 16.0
    stride_divisor: int = 1
    shifts_per_scale: Mapping[float, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        scales = tuple(float(s) for s in self.scales)
        ratios = tuple(float(r) for r in self.ratios)
        shifts = {float(k): int(v) for k, v in dict(self.shifts_per_scale).items()}
        if not scales:
            raise ValueError("at least one scale is required")
        if any(not (s > 0 and math.isfinite(s)) for s in scales):
            raise ValueError(f"scales must be positive finite, got {scales}")
        if list(scales) != sorted(set(scales)):
            raise ValueError(f"scales must be strictly ascending without duplicates, got {scales}")
        if not ratios:
            raise ValueError("at least one ratio is required")
        if any(not (r > 0 and math.isfinite(r)) for r in ratios):
            raise ValueError(f"ratios must be positive finite, got {ratios}")
        if list(ratios) != sorted(set(ratios)):
            raise ValueError(f"ratios must be strictly ascending without duplicates, got {ratios}")
        if not (self.base_stride > 0 and math.isfinite(self.base_stride)):
            raise ValueError(f"base_stride must be positive finite, got {self.base_stride!r}")
        if self.stride_divisor not in _ALLOWED_DIVISORS:
            raise ValueError(
                f"stride_divisor must be one of {_ALLOWED_DIVISORS}, got {self.stride_divisor!r}"
            )
        for scale, count in shifts.items():
            if scale not in scales:
                raise ValueError(f"shift entry for unknown scale {scale!r}")
            if count not in _ALLOWED_SHIFT_COUNTS:
                raise ValueError(
                    f"shift count must be one of {_ALLOWED_SHIFT_COUNTS}, got {count!r} for scale {scale!r}"
                )
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "ratios", ratios)
        object.__setattr__(self, "base_stride", float(self.base_stride))
        object.__setattr__(self, "stride_divisor", int(self.stride_divisor))
        object.__setattr__(self, "shifts_per_scale", shifts)

    @property
    def sliding_stride(self) -> float:
        """Spacing of sliding-window locations after stride reduction."""
        return self.base_stride / self.stride_divisor

    def shift_count(self, scale: float) -> int:
        """Extra shifted anchors per location for ``scale`` (0 if none)."""
        if scale not in self.scales:
            raise ValueError(f"unknown scale {scale!r}; spec has {self.scales}")
        return self.shifts_per_scale.get(scale, 0)

    @property
    def anchors_per_location(self) -> int:
        """Anchor boxes hosted by one sliding-window location."""
        extra = sum(self.shifts_per_scale.values())
        return len(self.ratios) * (len(self.scales) + extra)

    def sort_key(self):
        """Deterministic total order used for optimizer tie-breaking."""
        return (
            self.scales,
            self.ratios,
            self.base_stride,
            self.stride_divisor,
            tuple(sorted(self.shifts_per_scale.items())),
        )


@dataclass(frozen=True)
class LatticeGroup:
    """One (scale, ratio, sub-lattice) slab of anchors.

    Centers form a regular grid: ``(origin_x + col*stride,
    origin_y + row*stride)`` with ``0 <= row < rows`` and ``0 <= col <
    cols``.  Anchor IDs inside the group are ``id_start + row*cols + col``.
    """

    scale: float
    ratio: float
    sublattice: int
    box_w: float
    box_h: float
    origin_x: float
    origin_y: float
    stride: float
    rows: int
    cols: int
    id_start: int

    @property
    def count(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class AnchorLayout:
    """A materialized anchor set over a ``plane_w x plane_h`` plane.

    Immutable after construction; every query is read-only.  Anchor IDs are
    dense integers in ``[0, anchor_count)`` ordered by (scale, ratio,
    sub-lattice, row, col), so two builds of the same spec and plane agree
    box for box.
    """

    spec: AnchorSpec
    plane_w: float
    plane_h: float
    groups: tuple[LatticeGroup, ...]
    anchor_count: int

    def groups_for_scale(self, scale: float) -> tuple[LatticeGroup, ...]:
        if scale not in self.spec.scales:
            raise ValueError(f"unknown scale {scale!r}; layout has {self.spec.scales}")
        return tuple(g for g in self.groups if g.scale == scale)

    def group_of(self, anchor_id: int) -> LatticeGroup:
        if not 0 <= anchor_id < self.anchor_count:
            raise ValueError(f"anchor id {anchor_id} out of range [0, {self.anchor_count})")
        for group in self.groups:
            if anchor_id < group.id_start + group.count:
                return group
        raise AssertionError("unreachable: id ranges cover [0, anchor_count)")

    def anchor_center(self, anchor_id: int) -> tuple[float, float]:
        group = self.group_of(anchor_id)
        offset = anchor_id - group.id_start
        row, col = divmod(offset, group.cols)
        return (group.origin_x + col * group.stride, group.origin_y + row * group.stride)

    def anchor_box(self, anchor_id: int) -> RectBox:
        group = self.group_of(anchor_id)
        cx, cy = self.anchor_center(anchor_id)
        return RectBox(cx - group.box_w / 2.0, cy - group.box_h / 2.0, group.box_w, group.box_h)

    def all_boxes(self) -> np.ndarray:
        """All anchors as an ``(anchor_count, 4)`` array of (x, y, w, h), ID order."""
        out = np.empty((self.anchor_count, 4), dtype=np.float64)
        for g in self.groups:
            cx = g.origin_x + np.arange(g.cols, dtype=np.float64) * g.stride
            cy = g.origin_y + np.arange(g.rows, dtype=np.float64) * g.stride
            block = out[g.id_start : g.id_start + g.count]
            block[:, 0] = np.tile(cx - g.box_w / 2.0, g.rows)
            block[:, 1] = np.repeat(cy - g.box_h / 2.0, g.cols)
            block[:, 2] = g.box_w
            block[:, 3] = g.box_h
        return out


def _grid_size(extent: float, stride: float) -> int:
    # ceil(extent / stride) with a guard against float noise just above an
    # exact multiple; at least one location per axis.
    return max(1, math.ceil(extent / stride - 1e-9))


def build_layout(spec: AnchorSpec, plane_w: float, plane_h: float) -> AnchorLayout:
    """Tile the spec's anchors over a plane.

    Sliding-window locations sit at ``(s/2 + i*s, s/2 + j*s)`` for sliding
    stride ``s``, covering the plane with ``ceil(extent / s)`` locations per
    axis.  Shifted sub-lattices reuse the same grid shape at half-stride
    offsets, so a scale with ``n`` extra anchors holds ``(1+n) * rows *
    cols`` boxes.  Boxes are never clipped to the plane.
    """
    if not (plane_w > 0 and math.isfinite(plane_w)) or not (plane_h > 0 and math.isfinite(plane_h)):
        raise ValueError(f"plane dimensions must be positive finite, got {plane_w!r} x {plane_h!r}")
    stride = spec.sliding_stride
    cols = _grid_size(plane_w, stride)
    rows = _grid_size(plane_h, stride)
    groups: list[LatticeGroup] = []
    next_id = 0
    for scale in spec.scales:
        pattern = _SHIFT_PATTERNS[spec.shift_count(scale)]
        for ratio in spec.ratios:
            root = math.sqrt(ratio)
            box_w = scale / root
            box_h = scale * root
            for sub_index, (fx, fy) in enumerate(pattern):
                group = LatticeGroup(
                    scale=scale,
                    ratio=ratio,
                    sublattice=sub_index,
                    box_w=box_w,
                    box_h=box_h,
                    origin_x=stride / 2.0 + fx * stride,
                    origin_y=stride / 2.0 + fy * stride,
                    stride=stride,
                    rows=rows,
                    cols=cols,
                    id_start=next_id,
                )
                groups.append(group)
                next_id += group.count
    return AnchorLayout(
        spec=spec,
        plane_w=float(plane_w),
        plane_h=float(plane_h),
        groups=tuple(groups),
        anchor_count=next_id,
    )


def effective_anchor_stride(spec: AnchorSpec, scale: float) -> float:
    """Nearest-neighbor spacing of one scale's center set.

    The sliding stride ``s`` for no shifts, ``s/sqrt(2)`` with one shifted
    anchor (quincunx), ``s/2`` with three (half-stride square lattice).
    """
    count = spec.shift_count(scale)
    stride = spec.sliding_stride
    if count == 0:
        return stride
    if count == 1:
        return stride / math.sqrt(2.0)
    return stride / 2.0


def covering_radius(layout: AnchorLayout, scale: float) -> float:
    """Farthest any point lies from the nearest center of ``scale``.

    Computed for the periodic tiling (anchors extend uncropped, so finite-
    plane corner effects are excluded): ``effective_anchor_stride *
    sqrt(2)/2``, exact for the square and quincunx lattices built here.
    """
    if scale not in layout.spec.scales:
        raise ValueError(f"unknown scale {scale!r}; layout has {layout.spec.scales}")
    return effective_anchor_stride(layout.spec, scale) * (math.sqrt(2.0) / 2.0)


def _bracket(values: np.ndarray, origin: float, stride: float, n: int):
    """Indices of the two grid lines bracketing each value, clamped to the grid."""
    raw = np.floor((values - origin) / stride).astype(np.int64)
    lo = np.clip(raw, 0, n - 1)
    hi = np.clip(raw + 1, 0, n - 1)
    return lo, hi


def candidate_ids(group: LatticeGroup, px, py) -> np.ndarray:
    """Anchor IDs at the corners of the group cell(s) enclosing each point.

    Returns an ``(n_points, 4)`` array; entries may repeat where clamping
    at the plane edge collapses the bracket.  For any box centered at the
    point, some corner anchor attains
    the group's maximum IoU: per axis, the bracketing grid lines hold the
    two smallest center offsets, overlap extent never grows with offset,
    and the overlap product is maximized on one of those corners.  (When a
    large anchor fully contains a small box the maximum can tie across many
    positions; the corners still attain the maximal value.)
    """
    px = np.atleast_1d(np.asarray(px, dtype=np.float64))
    py = np.atleast_1d(np.asarray(py, dtype=np.float64))
    col_lo, col_hi = _bracket(px, group.origin_x, group.stride, group.cols)
    row_lo, row_hi = _bracket(py, group.origin_y, group.stride, group.rows)
    base = group.id_start
    ids = np.stack(
        [
            base + row_lo * group.cols + col_lo,
            base + row_lo * group.cols + col_hi,
            base + row_hi * group.cols + col_lo,
            base + row_hi * group.cols + col_hi,
        ],
        axis=1,
    )
    return ids


def nearest_centers(layout: AnchorLayout, px: float, py: float, scale: float) -> np.ndarray:
    """Candidate anchors of ``scale`` nearest to the point ``(px, py)``.

    All anchors on the enclosing lattice cell of each of the scale's
    sub-lattices (every ratio included), as sorted unique IDs.  For any box
    centered at the point, the set is guaranteed to contain an anchor
    attaining the scale's maximum IoU.
    """
    groups = layout.groups_for_scale(scale)
    ids = np.concatenate([candidate_ids(g, px, py).ravel() for g in groups])
    return np.unique(ids)
