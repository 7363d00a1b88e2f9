"""Face-annotation ingestion and anchor-coverage analytics.

Reads the common face-listing format (image path line, face count line,
then one ``x y w h ...`` line per face; extra columns ignored), computes
each face's max IoU against an anchor layout, and aggregates mean max IoU
and recall@tau into scale buckets.  Face scale is sqrt(w*h), so slightly
non-square boxes land in the bucket of their equivalent square.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .geometry import RectBox
from .layout import AnchorLayout, AnchorSpec, build_layout
from .matching import apply_jitter, jitter_offset_bound, max_overlap_values

__all__ = [
    "FaceRecord",
    "AnnotationError",
    "ParsedAnnotations",
    "parse_annotations",
    "DEFAULT_BUCKET_EDGES",
    "ScaleBucketReport",
    "bucket_stats",
    "JitterReport",
    "jitter_experiment",
    "compare_layouts",
    "bounding_plane",
]

# Powers of two spanning the usual face-scale range; buckets are
# [0, 8), [8, 16), ..., [512, inf).
DEFAULT_BUCKET_EDGES = (8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0)


@dataclass(frozen=True)
class FaceRecord:
    """One annotated face box.  ``image_w``/``image_h`` are 0 when unknown."""

    image_id: str
    box: RectBox
    image_w: float = 0.0
    image_h: float = 0.0

    def __post_init__(self) -> None:
        if not self.image_id:
            raise ValueError("image_id must be non-empty")
        if self.image_w < 0 or self.image_h < 0:
            raise ValueError(
                f"image size must be >= 0, got {self.image_w!r} x {self.image_h!r}"
            )

    @property
    def scale(self) -> float:
        return math.sqrt(self.box.w * self.box.h)


class AnnotationError(ValueError):
    """Malformed annotation listing; carries the 1-based offending line."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class ParsedAnnotations:
    """Parse result: kept records plus the count of dropped face lines."""

    records: tuple[FaceRecord, ...]
    skipped: int

    @property
    def face_lines(self) -> int:
        return len(self.records) + self.skipped


def _is_zero_box_line(line: str) -> bool:
    tokens = line.split()
    if len(tokens) < 4:
        return False
    try:
        return all(float(t) == 0.0 for t in tokens[:4])
    except ValueError:
        return False


def parse_annotations(source: str | Iterable[str]) -> ParsedAnnotations:
    """Parse a face listing into records.

    ``source`` is the listing text or an iterable of lines (an open file
    works).  Groups are [path, count, count face lines]; a count of zero
    may be followed by a single all-zero placeholder line, which is
    consumed and counted as skipped.  Degenerate boxes (w or h <= 0, or
    non-finite coordinates) are dropped and counted as skipped.  Structural
    problems raise :class:`AnnotationError` with the offending line number.
    """
    if isinstance(source, str):
        lines = source.splitlines()
    else:
        lines = [ln.rstrip("\r\n") for ln in source]
    n = len(lines)
    records: list[FaceRecord] = []
    skipped = 0
    i = 0
    while i < n:
        path = lines[i].strip()
        i += 1
        if not path:
            continue
        if i >= n:
            raise AnnotationError(n, f"expected a face count after {path!r}, got end of file")
        count_text = lines[i].strip()
        i += 1
        try:
            count = int(count_text)
        except ValueError:
            raise AnnotationError(i, f"expected an integer face count, got {count_text!r}") from None
        if count < 0:
            raise AnnotationError(i, f"face count must be >= 0, got {count}")
        if count == 0:
            if i < n and _is_zero_box_line(lines[i]):
                skipped += 1
                i += 1
            continue
        for k in range(count):
            if i >= n:
                raise AnnotationError(
                    n, f"{path!r} declares {count} faces but the listing ends after {k}"
                )
            text = lines[i]
            i += 1
            tokens = text.split()
            if len(tokens) < 4:
                raise AnnotationError(i, f"face line needs at least 4 numbers, got {text!r}")
            try:
                x, y, w, h = (float(t) for t in tokens[:4])
            except ValueError:
                raise AnnotationError(i, f"non-numeric face coordinates in {text!r}") from None
            try:
                box = RectBox(x, y, w, h)
            except ValueError:
                skipped += 1
                continue
            records.append(FaceRecord(image_id=path, box=box))
    return ParsedAnnotations(records=tuple(records), skipped=skipped)


def _face_boxes(faces: Sequence) -> list[RectBox]:
    return [f.box if isinstance(f, FaceRecord) else f for f in faces]


@dataclass(frozen=True)
class ScaleBucketReport:
    """Per-scale-bucket coverage statistics.

    ``edges`` are the interior boundaries; bucket b spans
    [edges[b-1], edges[b]) with 0 below the first edge and infinity above
    the last.  Empty buckets carry NaN mean and recall.
    """

    edges: tuple[float, ...]
    tau: float
    counts: tuple[int, ...]
    mean_max_iou: tuple[float, ...]
    recall: tuple[float, ...]

    @property
    def num_buckets(self) -> int:
        return len(self.edges) + 1

    def bounds(self, bucket: int) -> tuple[float, float]:
        lo = 0.0 if bucket == 0 else self.edges[bucket - 1]
        hi = math.inf if bucket == len(self.edges) else self.edges[bucket]
        return lo, hi

    def rows(self):
        """(lo, hi, count, mean_max_iou, recall) per bucket, in order."""
        for b in range(self.num_buckets):
            lo, hi = self.bounds(b)
            yield lo, hi, self.counts[b], self.mean_max_iou[b], self.recall[b]

    @property
    def total_faces(self) -> int:
        return sum(self.counts)


def _check_edges(edges: Sequence[float]) -> tuple[float, ...]:
    out = tuple(float(e) for e in edges)
    for e in out:
        if not (math.isfinite(e) and e > 0):
            raise ValueError(f"bucket edges must be positive and finite, got {e!r}")
    if any(b <= a for a, b in zip(out, out[1:])):
        raise ValueError(f"bucket edges must be strictly increasing, got {out!r}")
    return out


def bucket_stats(
    faces: Sequence,
    layout: AnchorLayout,
    edges: Sequence[float] = DEFAULT_BUCKET_EDGES,
    tau: float = 0.5,
) -> ScaleBucketReport:
    """Bucketed mean max IoU and recall@tau for ``faces`` against ``layout``.

    ``faces`` may be FaceRecords or bare RectBoxes.  An empty ``edges``
    lumps everything into a single bucket.
    """
    if not faces:
        raise ValueError("faces must be non-empty")
    if not (0.0 < tau < 1.0):
        raise ValueError(f"tau must lie in (0, 1), got {tau!r}")
    edges = _check_edges(edges)
    boxes = _face_boxes(faces)

    m = len(boxes)
    x = np.empty(m)
    y = np.empty(m)
    w = np.empty(m)
    h = np.empty(m)
    for i, box in enumerate(boxes):
        x[i], y[i], w[i], h[i] = box.x, box.y, box.w, box.h
    max_iou = max_overlap_values(layout, x, y, w, h)
    scales = np.sqrt(w * h)
    which = np.searchsorted(np.asarray(edges), scales, side="right")

    nb = len(edges) + 1
    counts = []
    means = []
    recalls = []
    for b in range(nb):
        mask = which == b
        c = int(np.count_nonzero(mask))
        counts.append(c)
        if c == 0:
            means.append(math.nan)
            recalls.append(math.nan)
        else:
            vals = max_iou[mask]
            means.append(float(np.sum(vals)) / c)
            recalls.append(float(np.count_nonzero(vals >= tau)) / c)
    return ScaleBucketReport(
        edges=edges,
        tau=tau,
        counts=tuple(counts),
        mean_max_iou=tuple(means),
        recall=tuple(recalls),
    )


@dataclass(frozen=True)
class JitterReport:
    """Distribution of per-bucket mean max IoU across jitter trials.

    Counts are constant across trials (jitter never changes face sizes);
    mean/min/max summarize the per-trial bucket means.
    """

    edges: tuple[float, ...]
    tau: float
    trials: int
    counts: tuple[int, ...]
    mean_of_means: tuple[float, ...]
    min_mean: tuple[float, ...]
    max_mean: tuple[float, ...]


def jitter_experiment(
    faces: Sequence,
    layout: AnchorLayout,
    trials: int,
    seed: int,
    edges: Sequence[float] = DEFAULT_BUCKET_EDGES,
    tau: float = 0.5,
) -> JitterReport:
    """Repeat bucket_stats under per-trial random face shifts.

    Trial t draws its offset from the (seed, t) random stream, so reports
    are reproducible and independent of evaluation order.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials!r}")
    boxes = _face_boxes(faces)
    stride = jitter_offset_bound(layout)
    per_trial: list[ScaleBucketReport] = []
    for t in range(trials):
        shifted, _ = apply_jitter(boxes, stride, seed, stream_index=t)
        per_trial.append(bucket_stats(shifted, layout, edges, tau))
    nb = per_trial[0].num_buckets
    mean_of = []
    min_of = []
    max_of = []
    for b in range(nb):
        vals = [r.mean_max_iou[b] for r in per_trial]
        if per_trial[0].counts[b] == 0:
            mean_of.append(math.nan)
            min_of.append(math.nan)
            max_of.append(math.nan)
        else:
            mean_of.append(float(np.mean(vals)))
            min_of.append(float(np.min(vals)))
            max_of.append(float(np.max(vals)))
    return JitterReport(
        edges=per_trial[0].edges,
        tau=tau,
        trials=trials,
        counts=per_trial[0].counts,
        mean_of_means=tuple(mean_of),
        min_mean=tuple(min_of),
        max_mean=tuple(max_of),
    )


def bounding_plane(faces: Sequence, min_side: float = 64.0) -> tuple[float, float]:
    """Smallest (w, h) plane containing every face, at least ``min_side``."""
    boxes = _face_boxes(faces)
    if not boxes:
        return min_side, min_side
    w = max(min_side, math.ceil(max(b.x2 for b in boxes)))
    h = max(min_side, math.ceil(max(b.y2 for b in boxes)))
    return float(w), float(h)


def compare_layouts(
    faces: Sequence,
    specs: Sequence[AnchorSpec],
    edges: Sequence[float] = DEFAULT_BUCKET_EDGES,
    tau: float = 0.5,
) -> list[tuple[AnchorSpec, ScaleBucketReport]]:
    """bucket_stats for each spec over the same faces and shared plane."""
    if len(specs) < 2:
        raise ValueError(f"need at least 2 specs to compare, got {len(specs)}")
    plane_w, plane_h = bounding_plane(faces)
    out = []
    for spec in specs:
        layout = build_layout(spec, plane_w, plane_h)
        out.append((spec, bucket_stats(faces, layout, edges, tau)))
    return out
