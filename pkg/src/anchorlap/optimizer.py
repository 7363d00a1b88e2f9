"""Exhaustive search over discrete anchor designs under an anchor budget.

The design space is small (stride divisors x per-scale shift counts x
candidate scale sets), so every admissible configuration is evaluated on
the given faces and ranked by mean max IoU.  Recall@tau rides along for
reporting but is not the objective.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

from .dataset import bounding_plane, bucket_stats
from .layout import AnchorSpec, build_layout

__all__ = ["SearchSpace", "ConfigScore", "enumerate_configs", "evaluate_config", "optimize"]

_ALLOWED_DIVISORS = (1, 2, 4)
_ALLOWED_SHIFTS = (0, 1, 3)


@dataclass(frozen=True)
class SearchSpace:
    """Discrete anchor-design space.

    Every scale in a candidate set may independently take any shift count
    from ``shift_choices``; ``budget`` caps anchors per sliding-window
    location.
    """

    stride_divisors: tuple[int, ...]
    shift_choices: tuple[int, ...]
    scale_sets: tuple[tuple[float, ...], ...]
    budget: int
    ratios: tuple[float, ...] = (1.0,)
    base_stride: float = 16.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "stride_divisors", tuple(int(d) for d in self.stride_divisors))
        object.__setattr__(self, "shift_choices", tuple(int(c) for c in self.shift_choices))
        object.__setattr__(
            self, "scale_sets", tuple(tuple(float(s) for s in ss) for ss in self.scale_sets)
        )
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        object.__setattr__(self, "base_stride", float(self.base_stride))
        if not self.stride_divisors:
            raise ValueError("stride_divisors must be non-empty")
        if any(d not in _ALLOWED_DIVISORS for d in self.stride_divisors):
            raise ValueError(
                f"stride_divisors must be a subset of {_ALLOWED_DIVISORS}, got {self.stride_divisors!r}"
            )
        if len(set(self.stride_divisors)) != len(self.stride_divisors):
            raise ValueError(f"duplicate stride_divisors in {self.stride_divisors!r}")
        if not self.shift_choices:
            raise ValueError("shift_choices must be non-empty")
        if any(c not in _ALLOWED_SHIFTS for c in self.shift_choices):
            raise ValueError(
                f"shift_choices must be a subset of {_ALLOWED_SHIFTS}, got {self.shift_choices!r}"
            )
        if len(set(self.shift_choices)) != len(self.shift_choices):
            raise ValueError(f"duplicate shift_choices in {self.shift_choices!r}")
        if not self.scale_sets:
            raise ValueError("scale_sets must be non-empty")
        if self.budget < 1:
            raise ValueError(f"budget must be >= 1, got {self.budget!r}")
        if not self.ratios:
            raise ValueError("ratios must be non-empty")
        if not (math.isfinite(self.base_stride) and self.base_stride > 0):
            raise ValueError(f"base_stride must be positive and finite, got {self.base_stride!r}")


@dataclass(frozen=True)
class ConfigScore:
    spec: AnchorSpec
    objective: float
    recall: float
    anchors_per_location: int

    def __post_init__(self) -> None:
        if not (0.0 <= self.objective <= 1.0):
            raise ValueError(f"objective out of [0, 1]: {self.objective!r}")
        if not (0.0 <= self.recall <= 1.0):
            raise ValueError(f"recall out of [0, 1]: {self.recall!r}")


def enumerate_configs(space: SearchSpace) -> list[AnchorSpec]:
    """All specs in the space whose anchors-per-location fit the budget.

    Order is deterministic: scale sets as given, then divisors ascending,
    then per-scale shift assignments in lexicographic order.
    """
    configs: list[AnchorSpec] = []
    for scale_set in space.scale_sets:
        for divisor in sorted(space.stride_divisors):
            for assignment in itertools.product(
                sorted(space.shift_choices), repeat=len(scale_set)
            ):
                spec = AnchorSpec(
                    scales=scale_set,
                    ratios=space.ratios,
                    base_stride=space.base_stride,
                    stride_divisor=divisor,
                    shifts_per_scale={
                        s: n for s, n in zip(scale_set, assignment) if n > 0
                    },
                )
                if spec.anchors_per_location <= space.budget:
                    configs.append(spec)
    return configs


def evaluate_config(
    spec: AnchorSpec,
    faces: Sequence,
    tau: float = 0.5,
    plane: tuple[float, float] | None = None,
) -> ConfigScore:
    """Mean max IoU and recall@tau of ``faces`` against the spec's layout."""
    if not faces:
        raise ValueError("faces must be non-empty")
    if plane is None:
        plane = bounding_plane(faces)
    layout = build_layout(spec, plane[0], plane[1])
    report = bucket_stats(faces, layout, edges=(), tau=tau)
    return ConfigScore(
        spec=spec,
        objective=report.mean_max_iou[0],
        recall=report.recall[0],
        anchors_per_location=spec.anchors_per_location,
    )


def optimize(space: SearchSpace, faces: Sequence, tau: float = 0.5) -> list[ConfigScore]:
    """Rank every admissible config by objective, best first.

    Ties prefer fewer anchors per location, then the lexicographically
    smaller spec.  All configs are scored on the same bounding plane so
    the comparison is apples to apples.
    """
    configs = enumerate_configs(space)
    if not configs:
        raise ValueError("no configuration fits the budget")
    plane = bounding_plane(faces)
    scores = [evaluate_config(spec, faces, tau, plane) for spec in configs]
    scores.sort(key=lambda sc: (-sc.objective, sc.anchors_per_location, sc.spec.sort_key()))
    return scores
