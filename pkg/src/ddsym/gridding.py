"""Boxes, uniform partitions with center representatives, and the quantizer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigurationError, InputShapeError

OUT_OF_DOMAIN = -1

# relative distance to a cell face below which a point counts as lying on it
_FACE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape or lo.size == 0:
            raise ConfigurationError("box bounds must be non-empty vectors of equal length")
        if not np.all(lo < hi):
            raise ConfigurationError(f"degenerate box: lower={lo.tolist()} upper={hi.tolist()}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_pairs(cls, pairs) -> "Box":
        pairs = np.asarray(pairs, dtype=float).reshape(-1, 2)
        return cls(pairs[:, 0], pairs[:, 1])

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, points) -> np.ndarray:
        P = np.asarray(points, dtype=float).reshape(-1, self.dim)
        return np.all((P >= self.lower) & (P <= self.upper), axis=1)

    def deflate(self, margin: float) -> Optional["Box"]:
        """Shrink every face inwards by ``margin``; ``None`` if nothing is left."""
        lo, hi = self.lower + margin, self.upper - margin
        if np.any(lo >= hi):
            return None
        return Box(lo, hi)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    def __eq__(self, other):
        return (isinstance(other, Box) and np.array_equal(self.lower, other.lower)
                and np.array_equal(self.upper, other.upper))

    def __repr__(self):
        return f"Box({self.lower.tolist()}, {self.upper.tolist()})"


@dataclass(frozen=True, eq=False)
class UniformGrid:
    box: Box
    cells_per_axis: Tuple[int, ...]

    def __post_init__(self):
        cells = tuple(int(c) for c in np.atleast_1d(self.cells_per_axis))
        if len(cells) != self.box.dim:
            raise ConfigurationError("cells_per_axis must match the box dimension")
        if any(c < 1 for c in cells):
            raise ConfigurationError("every axis needs at least one cell")
        object.__setattr__(self, "cells_per_axis", cells)

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def size(self) -> int:
        return int(np.prod(self.cells_per_axis))

    @property
    def cell_widths(self) -> np.ndarray:
        return self.box.widths / np.asarray(self.cells_per_axis)

    @property
    def delta(self) -> float:
        """Full cell diagonal (the sup-distance between two points of a cell)."""
        return float(np.linalg.norm(self.cell_widths))

    def representative(self, index) -> np.ndarray:
        idx = np.asarray(index)
        coords = np.stack(np.unravel_index(idx, self.cells_per_axis), axis=-1)
        return self.box.lower + (coords + 0.5) * self.cell_widths

    def representatives(self) -> np.ndarray:
        """All centers in row-major order, shape ``(size, dim)``."""
        return self.representative(np.arange(self.size))

    def locate(self, points) -> np.ndarray:
        """Row-major cell index of each point, ``OUT_OF_DOMAIN`` outside the box.

        Points on a face shared by two cells go to the lower-index cell.
        """
        P = np.asarray(points, dtype=float)
        if P.shape[-1] != self.dim:
            raise InputShapeError(f"points have dimension {P.shape[-1]}, expected {self.dim}")
        lead = P.shape[:-1]
        P = P.reshape(-1, self.dim)
        t = (P - self.box.lower) / self.cell_widths
        nearest = np.rint(t)
        on_face = np.abs(t - nearest) <= _FACE_TOL * np.maximum(1.0, np.abs(t))
        k = np.where(on_face, nearest - 1, np.floor(t))
        k = np.clip(k, 0, np.asarray(self.cells_per_axis) - 1).astype(np.intp)
        flat = np.ravel_multi_index(tuple(k.T), self.cells_per_axis)
        flat = np.where(self.box.contains(P), flat, OUT_OF_DOMAIN)
        return flat.reshape(lead)

    def quantize(self, x) -> Optional[Tuple[int, np.ndarray]]:
        """``(cell_index, representative)`` of ``x``, or ``None`` outside the box."""
        x = np.asarray(x, dtype=float).reshape(self.dim)
        idx = int(self.locate(x))
        if idx == OUT_OF_DOMAIN:
            return None
        return idx, self.representative(idx)

    def to_dict(self) -> dict:
        return {**self.box.to_dict(), "cells": list(self.cells_per_axis)}

    @classmethod
    def from_dict(cls, d) -> "UniformGrid":
        return cls(Box(d["lower"], d["upper"]), tuple(d["cells"]))

    def __eq__(self, other):
        return (isinstance(other, UniformGrid) and self.box == other.box
                and self.cells_per_axis == other.cells_per_axis)


def build_grid(box: Box, cells_per_axis) -> UniformGrid:
    return UniformGrid(box, tuple(np.atleast_1d(cells_per_axis)))


def quantize(grid: UniformGrid, x):
    return grid.quantize(x)
