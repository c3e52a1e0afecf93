"""Axis-aligned box geometry.

Boxes are (x1, y1, x2, y2) in pixel space, origin top-left, half-open:
area = (x2 - x1) * (y2 - y1). The half-open convention makes the analytic
IoU agree exactly with unit-cell counting on integer boxes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union


class InvalidBoxError(ValueError):
    """Box coordinates violate the bbox invariants."""


class DegenerateBoxError(InvalidBoxError):
    """Clipping collapsed a box to zero area."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with strictly positive area and non-negative coords."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise InvalidBoxError(f"non-finite coordinates: {coords}")
        if any(c < 0 for c in coords):
            raise InvalidBoxError(f"negative coordinates: {coords}")
        if self.x2 <= self.x1 or self.y2 <= self.y1:
            raise InvalidBoxError(f"zero or negative extent: {coords}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def to_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @classmethod
    def from_sequence(cls, coords: Sequence[float]) -> "BBox":
        if len(coords) != 4:
            raise InvalidBoxError(f"expected 4 coordinates, got {len(coords)}")
        return cls(*(float(c) for c in coords))


@dataclass(frozen=True)
class ImageSize:
    """Image extent in whole pixels."""

    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be at least 1x1, got {self.width}x{self.height}")

    def contains(self, box: BBox) -> bool:
        return box.x1 >= 0 and box.y1 >= 0 and box.x2 <= self.width and box.y2 <= self.height


def intersection_area(a: BBox, b: BBox) -> float:
    """Overlap area of two boxes, 0 when disjoint."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes.

    Symmetric, 1.0 for identical boxes, 0.0 for disjoint ones.
    """
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    return inter / union


def best_match(pred: BBox, gts: Sequence[BBox]) -> tuple[float, int]:
    """Max IoU of ``pred`` over a nonempty ground-truth set.

    Returns (best_iou, argmax index); ties break toward the lowest index.
    """
    if not gts:
        raise InvalidBoxError("ground-truth set must be nonempty")
    best_iou, best_index = 0.0, 0
    for i, gt in enumerate(gts):
        value = iou(pred, gt)
        if value > best_iou:
            best_iou, best_index = value, i
    return best_iou, best_index


def clamp_to_image(box: Union[BBox, Sequence[float]], size: ImageSize) -> BBox:
    """Clip a box into [0, width] x [0, height].

    Accepts raw (x1, y1, x2, y2) coordinates as well as a BBox, since the
    point of clamping is to sanitize values that may not satisfy the BBox
    invariants yet. Raises DegenerateBoxError when clipping leaves no area.
    """
    raw = box.to_list() if isinstance(box, BBox) else [float(c) for c in box]
    if len(raw) != 4 or not all(math.isfinite(c) for c in raw):
        raise InvalidBoxError(f"cannot clamp {raw}")
    x1 = min(max(raw[0], 0.0), float(size.width))
    y1 = min(max(raw[1], 0.0), float(size.height))
    x2 = min(max(raw[2], 0.0), float(size.width))
    y2 = min(max(raw[3], 0.0), float(size.height))
    if x2 <= x1 or y2 <= y1:
        raise DegenerateBoxError(
            f"box {raw} collapses to zero area inside {size.width}x{size.height}"
        )
    return BBox(x1, y1, x2, y2)
