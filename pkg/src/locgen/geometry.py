"""Axis-aligned box algebra in normalized image coordinates.

All boxes live in corner form (x1, y1, x2, y2) with 0 <= x1 <= x2 <= 1 and
0 <= y1 <= y2 <= 1; (x1, y1) is the upper-left corner. The zero box
(0, 0, 0, 0) is valid and has zero area. Formula anchors:
docs/mechanism_map.md#answer-region-union, #generalized-iou,
#coverage-probability.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class BBox:
    """Normalized rectangle; the bridge object between tokens and image space."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (0.0 <= self.x1 <= self.x2 <= 1.0 and 0.0 <= self.y1 <= self.y2 <= 1.0):
            raise ValueError(f"invalid box coordinates {self.as_tuple()}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=np.float64)

    @classmethod
    def from_seq(cls, seq) -> "BBox":
        x1, y1, x2, y2 = (float(v) for v in seq)
        return cls(x1, y1, x2, y2)


ZERO_BOX = BBox(0.0, 0.0, 0.0, 0.0)


def _coords(b) -> tuple[float, float, float, float]:
    if isinstance(b, BBox):
        return b.as_tuple()
    x1, y1, x2, y2 = (float(v) for v in b)
    return (x1, y1, x2, y2)


def union_box(a, b) -> BBox:
    """Smallest box containing both inputs (componentwise min/max).

    See docs/mechanism_map.md#answer-region-union.
    """
    ax1, ay1, ax2, ay2 = _coords(a)
    bx1, by1, bx2, by2 = _coords(b)
    return BBox(min(ax1, bx1), min(ay1, by1), max(ax2, bx2), max(ay2, by2))


def intersection_area(a, b) -> float:
    ax1, ay1, ax2, ay2 = _coords(a)
    bx1, by1, bx2, by2 = _coords(b)
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    return max(iw, 0.0) * max(ih, 0.0)


def area(b) -> float:
    x1, y1, x2, y2 = _coords(b)
    return (x2 - x1) * (y2 - y1)


def iou(a, b) -> float:
    """|A∩B| / |A∪B|; 0 when both boxes have zero area."""
    inter = intersection_area(a, b)
    union = area(a) + area(b) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def giou(a, b) -> float:
    """Generalized IoU: iou minus the hull's empty fraction, in (-1, 1].

    Degenerate hull (both boxes are points) returns 0 with a warning.
    See docs/mechanism_map.md#generalized-iou.
    """
    ax1, ay1, ax2, ay2 = _coords(a)
    bx1, by1, bx2, by2 = _coords(b)
    hull = (max(ax2, bx2) - min(ax1, bx1)) * (max(ay2, by2) - min(ay1, by1))
    if hull <= 0.0:
        warnings.warn("giou: degenerate enclosing box, returning 0", RuntimeWarning)
        return 0.0
    inter = intersection_area(a, b)
    union = area(a) + area(b) - inter
    v = inter / union if union > 0.0 else 0.0
    return v - (hull - union) / hull


def iou_hat(a, b) -> float:
    """Fraction of box b covered by box a: |A∩B| / |B|; 0 for zero-area b.

    The zero-area guard means a token with no extent can never be selected
    visually. See docs/mechanism_map.md#coverage-probability.
    """
    area_b = area(b)
    if area_b <= 0.0:
        return 0.0
    return intersection_area(a, b) / area_b


def union_all(boxes) -> BBox:
    """Union of a non-empty sequence of boxes; the zero box for an empty one."""
    boxes = list(boxes)
    if not boxes:
        return ZERO_BOX
    out = BBox.from_seq(_coords(boxes[0]))
    for b in boxes[1:]:
        out = union_box(out, b)
    return out


# array forms (hot paths go through locgen.kernels)


def iou_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return kernels.pair_iou(a, b)


def giou_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return kernels.pair_giou(a, b)


def iou_hat_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return kernels.pair_coverage(a, b)


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return kernels.pairwise_iou(a, b)
