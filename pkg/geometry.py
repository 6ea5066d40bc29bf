"""Axis-aligned box arithmetic for paired full/visible boxes.

Boxes are stored in corner form (x1, y1, x2, y2) with continuous geometry:
area is (x2 - x1) * (y2 - y1), no +1 pixel convention. Annotation files in
(x, y, w, h) form convert with x2 = x + w.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config import MASK_RESOLUTION

BOX_SELECTORS = ("full", "visible")


@dataclass(frozen=True)
class BBox:
    """Axis-aligned rectangle in image pixel coordinates."""
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"Box coordinates must be finite: {coords}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"Box corners out of order: {coords}")

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "BBox":
        return cls(float(x), float(y), float(x) + float(w), float(y) + float(h))

    def to_xywh(self) -> Tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2 - self.x1, self.y2 - self.y1)

    def to_list(self) -> List[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def center(self) -> Tuple[float, float]:
        return ((self.x1 + self.x2) / 2, (self.y1 + self.y2) / 2)

    @property
    def is_degenerate(self) -> bool:
        return self.x1 == self.x2 or self.y1 == self.y2

    def translate(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)

    def scale(self, s: float) -> "BBox":
        """Scale about the origin; s must be positive."""
        if s <= 0:
            raise ValueError(f"Scale factor must be positive, got {s}")
        return BBox(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)

    def contains(self, other: "BBox") -> bool:
        return (self.x1 <= other.x1 and self.y1 <= other.y1
                and other.x2 <= self.x2 and other.y2 <= self.y2)


@dataclass(frozen=True)
class PairedBox:
    """A full-body box and its visible-body box, one sample unit Q=(F, V)."""
    full: BBox
    visible: BBox

    def select(self, which: str) -> BBox:
        if which == "full":
            return self.full
        if which == "visible":
            return self.visible
        raise ValueError(f"Unknown box selector '{which}', expected one of {BOX_SELECTORS}")

    def translate(self, dx: float, dy: float) -> "PairedBox":
        return PairedBox(self.full.translate(dx, dy), self.visible.translate(dx, dy))

    def scale(self, s: float) -> "PairedBox":
        return PairedBox(self.full.scale(s), self.visible.scale(s))


@dataclass(frozen=True, eq=False)
class AttentionMask:
    """Binary visible-region mask over the full box, h x w cells."""
    grid: np.ndarray = field(repr=False)
    resolution: Tuple[int, int]

    def __eq__(self, other):
        if not isinstance(other, AttentionMask):
            return NotImplemented
        return self.resolution == other.resolution and np.array_equal(self.grid, other.grid)


def area(b: BBox) -> float:
    """Area of a box."""
    return (b.x2 - b.x1) * (b.y2 - b.y1)


def intersection(a: BBox, b: BBox) -> Optional[BBox]:
    """Axis-aligned intersection, None when the boxes are disjoint.

    Boxes that only touch along an edge intersect in a degenerate box.
    """
    x1 = max(a.x1, b.x1)
    y1 = max(a.y1, b.y1)
    x2 = min(a.x2, b.x2)
    y2 = min(a.y2, b.y2)
    if x1 > x2 or y1 > y2:
        return None
    return BBox(x1, y1, x2, y2)


def _inter_area(a: BBox, b: BBox) -> float:
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou(a: BBox, b: BBox) -> float:
    """Area(a & b) / Area(a | b); 0 when the union is empty."""
    inter = _inter_area(a, b)
    union = area(a) + area(b) - inter
    if union <= 0:
        return 0.0
    return inter / union


def iof(a: BBox, v: BBox) -> float:
    """Area(a & v) / Area(v); 0 when v has no area. Not symmetric."""
    denom = area(v)
    if denom <= 0:
        return 0.0
    return _inter_area(a, v) / denom


def validate_pair(pair: PairedBox) -> List[str]:
    """Warnings for a ground-truth pair. Visible outside full is allowed, only reported."""
    warnings = []
    if not pair.full.contains(pair.visible):
        warnings.append("visible box extends outside full box")
    if area(pair.visible) > area(pair.full):
        warnings.append("visible box larger than full box")
    if pair.full.is_degenerate:
        warnings.append("full box is degenerate")
    return warnings


def boxes_to_array(boxes: Sequence[BBox]) -> np.ndarray:
    """Stack boxes into an (n, 4) float array."""
    if not boxes:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([[b.x1, b.y1, b.x2, b.y2] for b in boxes], dtype=np.float64)


def _areas(arr: np.ndarray) -> np.ndarray:
    return (arr[:, 2] - arr[:, 0]) * (arr[:, 3] - arr[:, 1])


def _inter_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    xx1 = np.maximum(a[:, None, 0], b[None, :, 0])
    yy1 = np.maximum(a[:, None, 1], b[None, :, 1])
    xx2 = np.minimum(a[:, None, 2], b[None, :, 2])
    yy2 = np.minimum(a[:, None, 3], b[None, :, 3])
    w = np.maximum(0.0, xx2 - xx1)
    h = np.maximum(0.0, yy2 - yy1)
    return w * h


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (n, 4) and (m, 4) corner arrays."""
    inter = _inter_matrix(a, b)
    union = _areas(a)[:, None] + _areas(b)[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def iof_matrix(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Pairwise IoF: entry (i, j) is Area(a_i & v_j) / Area(v_j)."""
    inter = _inter_matrix(a, v)
    denom = np.broadcast_to(_areas(v)[None, :], inter.shape)
    out = np.zeros_like(inter)
    np.divide(inter, denom, out=out, where=denom > 0)
    return out


def iou_row(box: np.ndarray, others: np.ndarray) -> np.ndarray:
    """IoU of one (4,) box against (m, 4) boxes."""
    return iou_matrix(box[None, :], others)[0]


def attention_mask(p: PairedBox, resolution: Tuple[int, int] = MASK_RESOLUTION) -> AttentionMask:
    """Rasterize the visible box over an h x w grid laid on the full box.

    A cell is 1 when its center lies inside the visible box (closed bounds).
    """
    h, w = resolution
    if h < 1 or w < 1:
        raise ValueError(f"Mask resolution must be at least 1x1, got {resolution}")
    full, vis = p.full, p.visible
    if full.is_degenerate:
        raise ValueError("Cannot build an attention mask over a degenerate full box")

    cx = full.x1 + (np.arange(w) + 0.5) * (full.width / w)
    cy = full.y1 + (np.arange(h) + 0.5) * (full.height / h)
    inside_x = (cx >= vis.x1) & (cx <= vis.x2)
    inside_y = (cy >= vis.y1) & (cy <= vis.y2)
    grid = (inside_y[:, None] & inside_x[None, :]).astype(np.uint8)
    return AttentionMask(grid=grid, resolution=(h, w))
