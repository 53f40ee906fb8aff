"""Axis-aligned box primitives and overlap measures.

Boxes live in pixel coordinates with y growing downward. A box is stored
as (l, t, r, b) and serialized as the JSON array [l, t, r, b]; it is valid
only when l < r and t < b, so every valid box has positive area.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputValidationError

__all__ = [
    "BBox",
    "Page",
    "area",
    "intersection_area",
    "bounding_union_area",
    "iou",
    "boxes_to_array",
    "array_to_boxes",
    "box_areas",
    "pairwise_intersection",
    "pairwise_iou",
    "clamp_to_page",
]


@dataclass(frozen=True)
class BBox:
    """One word box: left, top, right, bottom edges in pixels."""

    l: float
    t: float
    r: float
    b: float

    def __post_init__(self) -> None:
        if not (self.l < self.r and self.t < self.b):
            raise InputValidationError(
                f"degenerate box: l={self.l} t={self.t} r={self.r} b={self.b}"
            )

    @property
    def width(self) -> float:
        return self.r - self.l

    @property
    def height(self) -> float:
        return self.b - self.t

    def to_list(self) -> list[float]:
        return [float(self.l), float(self.t), float(self.r), float(self.b)]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "BBox":
        if len(values) != 4:
            raise InputValidationError(f"box needs 4 numbers, got {len(values)}")
        l, t, r, b = (float(v) for v in values)
        return cls(l, t, r, b)


@dataclass(frozen=True)
class Page:
    """Page reference frame; all boxes on the page lie in [0,w] x [0,h]."""

    page_id: str
    width: float
    height: float

    def __post_init__(self) -> None:
        if not self.page_id:
            raise InputValidationError("page_id must be non-empty")
        if not (self.width > 0 and self.height > 0):
            raise InputValidationError(
                f"page dimensions must be positive, got {self.width} x {self.height}"
            )


def area(box: BBox) -> float:
    """Box area in square pixels; positive for every valid box."""
    return box.width * box.height


def intersection_area(a: BBox, b: BBox) -> float:
    """Overlap area of two boxes, 0 when they are disjoint or touching."""
    iw = min(a.r, b.r) - max(a.l, b.l)
    ih = min(a.b, b.b) - max(a.t, b.t)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def bounding_union_area(a: BBox, b: BBox) -> float:
    """Area of the smallest rectangle containing both boxes."""
    return (max(a.r, b.r) - min(a.l, b.l)) * (max(a.b, b.b) - min(a.t, b.t))


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union, in [0, 1]; 1 only for identical extremes."""
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (area(a) + area(b) - inter)


def boxes_to_array(boxes: Sequence[BBox]) -> np.ndarray:
    """Stack boxes into an (n, 4) float array in [l, t, r, b] order."""
    if len(boxes) == 0:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([[bx.l, bx.t, bx.r, bx.b] for bx in boxes], dtype=np.float64)


def array_to_boxes(arr: np.ndarray) -> list[BBox]:
    return [BBox(float(l), float(t), float(r), float(b)) for l, t, r, b in arr]


def box_areas(arr: np.ndarray) -> np.ndarray:
    return (arr[:, 2] - arr[:, 0]) * (arr[:, 3] - arr[:, 1])


def pairwise_intersection(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Intersection areas between every row of a (n,4) and of b (m,4)."""
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    return np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    inter = pairwise_intersection(a, b)
    union = box_areas(a)[:, None] + box_areas(b)[None, :] - inter
    return inter / union


def clamp_to_page(values: Sequence[float], page: Page) -> list[float]:
    """Clamp raw [l, t, r, b] numbers into the page rectangle.

    Clamping alone; the caller decides whether the clamped box is still
    valid (a box fully outside the page collapses and is rejected there).
    """
    l, t, r, b = (float(v) for v in values)
    return [
        min(max(l, 0.0), page.width),
        min(max(t, 0.0), page.height),
        min(max(r, 0.0), page.width),
        min(max(b, 0.0), page.height),
    ]
