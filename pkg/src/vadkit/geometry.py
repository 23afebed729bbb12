"""Pixel-grid geometry shared by the detector and the evaluator.

Boxes are half-open integer pixel sets ``[x, x+w) x [y, y+h)``; free-form
regions are explicit pixel sets.  Binary masks are plain ``bool`` numpy
arrays of shape ``(height, width)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np
from scipy import ndimage

BinaryMask = np.ndarray

_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box; ``x`` is the column and ``y`` the row of its top-left pixel."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            if int(getattr(self, name)) != getattr(self, name):
                raise ValueError(f"box {name} must be an integer")
        if self.w < 1 or self.h < 1:
            raise ValueError(f"degenerate box (w={self.w}, h={self.h})")

    @property
    def area(self) -> int:
        return self.w * self.h

    def fits(self, width: int, height: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x + self.w <= width and self.y + self.h <= height

    def to_region(self) -> "PixelRegion":
        rr, cc = np.mgrid[self.y:self.y + self.h, self.x:self.x + self.w]
        return PixelRegion(rr.ravel(), cc.ravel())


class PixelRegion:
    """A non-empty set of ``(row, col)`` pixels.

    Pixels are stored as two parallel int64 arrays in raster order, so two
    regions holding the same set compare equal.
    """

    __slots__ = ("rows", "cols", "_bbox")

    def __init__(self, rows, cols):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        if rows.shape != cols.shape:
            raise ValueError("rows and cols must have the same length")
        if rows.size == 0:
            raise ValueError("empty pixel region")
        if rows.min() < 0 or cols.min() < 0:
            raise ValueError("negative pixel coordinate")
        keys = _keys(rows, cols)
        order = np.argsort(keys, kind="stable")
        keys = keys[order]
        if np.any(keys[1:] == keys[:-1]):
            raise ValueError("duplicate pixels in region")
        self.rows = rows[order]
        self.cols = cols[order]
        self.rows.flags.writeable = False
        self.cols.flags.writeable = False
        self._bbox = None

    @classmethod
    def from_pixels(cls, pixels: Iterable[tuple[int, int]]) -> "PixelRegion":
        pts = list(pixels)
        if not pts:
            raise ValueError("empty pixel region")
        arr = np.asarray(pts, dtype=np.int64)
        return cls(arr[:, 0], arr[:, 1])

    @property
    def size(self) -> int:
        return int(self.rows.size)

    def __len__(self) -> int:
        return self.size

    @property
    def pixels(self) -> frozenset:
        return frozenset(zip(self.rows.tolist(), self.cols.tolist()))

    @property
    def bbox(self) -> BoundingBox:
        if self._bbox is None:
            r0, c0 = int(self.rows.min()), int(self.cols.min())
            r1, c1 = int(self.rows.max()), int(self.cols.max())
            self._bbox = BoundingBox(c0, r0, c1 - c0 + 1, r1 - r0 + 1)
        return self._bbox

    def fits(self, width: int, height: int) -> bool:
        return bool(self.rows.max() < height and self.cols.max() < width)

    def keys(self) -> np.ndarray:
        return _keys(self.rows, self.cols)

    def __eq__(self, other):
        if not isinstance(other, PixelRegion):
            return NotImplemented
        return np.array_equal(self.rows, other.rows) and np.array_equal(self.cols, other.cols)

    def __hash__(self):
        return hash((self.rows.tobytes(), self.cols.tobytes()))

    def __repr__(self):
        b = self.bbox
        return f"PixelRegion(size={self.size}, bbox=({b.x}, {b.y}, {b.w}, {b.h}))"


Region = Union[BoundingBox, PixelRegion]


def _keys(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    return (rows << 32) | cols


def _count_in_box(region: PixelRegion, box: BoundingBox) -> int:
    inside = (
        (region.rows >= box.y) & (region.rows < box.y + box.h)
        & (region.cols >= box.x) & (region.cols < box.x + box.w)
    )
    return int(np.count_nonzero(inside))


def _size(r: Region) -> int:
    return r.area if isinstance(r, BoundingBox) else r.size


def intersection_size(a: Region, b: Region) -> int:
    if isinstance(a, BoundingBox) and isinstance(b, BoundingBox):
        dx = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
        dy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
        return max(dx, 0) * max(dy, 0)
    if isinstance(a, BoundingBox):
        a, b = b, a
    if isinstance(b, BoundingBox):
        return _count_in_box(a, b)
    return int(np.intersect1d(a.keys(), b.keys(), assume_unique=True).size)


def iou(a: Region, b: Region) -> float:
    """Intersection over union of two pixel sets; boxes are rasterized."""
    na, nb = _size(a), _size(b)
    if na == 0 or nb == 0:
        raise ValueError("iou of an empty region")
    inter = intersection_size(a, b)
    return inter / (na + nb - inter)


def connected_components(mask: BinaryMask, connectivity: int = 4) -> list[PixelRegion]:
    """Split the foreground of ``mask`` into maximal connected regions.

    Regions come back sorted by (min row, min col), with the raster index of
    the first pixel as the final tie-break.
    """
    if connectivity not in _STRUCTURES:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2 or mask.shape[0] < 1 or mask.shape[1] < 1:
        raise ValueError("mask must be a non-empty 2-D array")
    labels, n = ndimage.label(mask, structure=_STRUCTURES[connectivity])
    if n == 0:
        return []
    rows, cols = np.nonzero(labels)
    lab = labels[rows, cols]
    order = np.argsort(lab, kind="stable")
    rows, cols, lab = rows[order], cols[order], lab[order]
    splits = np.flatnonzero(np.diff(lab)) + 1
    regions = [PixelRegion(r, c) for r, c in zip(np.split(rows, splits), np.split(cols, splits))]
    regions.sort(key=lambda g: (int(g.rows.min()), int(g.cols.min()), int(g.rows[0]), int(g.cols[0])))
    return regions


def regions_to_mask(regions: Iterable[PixelRegion], width: int, height: int) -> BinaryMask:
    mask = np.zeros((height, width), dtype=bool)
    for reg in regions:
        if not reg.fits(width, height):
            raise ValueError("region outside mask bounds")
        mask[reg.rows, reg.cols] = True
    return mask


def box_mask(boxes: Iterable[BoundingBox], width: int, height: int) -> BinaryMask:
    mask = np.zeros((height, width), dtype=bool)
    for b in boxes:
        mask[b.y:b.y + b.h, b.x:b.x + b.w] = True
    return mask
