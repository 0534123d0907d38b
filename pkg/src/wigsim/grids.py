"""Rectangular phase-space grids used for annihilation, initialisation
and reconstruction."""

import numpy as np

AXES = ("x", "y", "px", "py")


class GridError(ValueError):
    pass


class PhaseSpaceGrid:
    """Uniform rectangular grid over (x, y, px, py).

    Parameters
    ----------
    mins, maxs : sequence of 4 floats
    counts : sequence of 4 ints, each >= 2
    """

    def __init__(self, mins, maxs, counts):
        self.mins = np.asarray(mins, dtype=float)
        self.maxs = np.asarray(maxs, dtype=float)
        self.counts = np.asarray(counts, dtype=np.int64)
        if self.mins.shape != (4,) or self.maxs.shape != (4,) or self.counts.shape != (4,):
            raise GridError("grid needs 4 mins, 4 maxs, 4 counts")
        if np.any(self.counts < 2):
            raise GridError(f"cell counts must be >= 2, got {self.counts.tolist()}")
        if np.any(self.mins >= self.maxs):
            raise GridError("each min must be < max")
        self.widths = (self.maxs - self.mins) / self.counts
        self.cell_volume = float(np.prod(self.widths))
        self.n_cells = int(np.prod(self.counts))

    @classmethod
    def from_dict(cls, d):
        mins, maxs, counts = [], [], []
        for ax in AXES:
            spec = d[ax]
            mins.append(spec["min"])
            maxs.append(spec["max"])
            counts.append(spec["cells"])
        return cls(mins, maxs, counts)

    def to_dict(self):
        return {
            ax: {"min": float(self.mins[d]), "max": float(self.maxs[d]), "cells": int(self.counts[d])}
            for d, ax in enumerate(AXES)
        }

    def cell_index(self, points):
        """Map points (n, 4) to flat cell ids; -1 marks points outside.

        A point on the upper boundary of the last cell is outside, all
        other boundaries belong to the cell on their right/upper side,
        so every point maps to exactly one cell or to the outside.
        """
        pts = np.asarray(points, dtype=float)
        flat = np.zeros(len(pts), dtype=np.int64)
        inside = np.ones(len(pts), dtype=bool)
        for d in range(4):
            f = (pts[:, d] - self.mins[d]) / self.widths[d]
            idx = f.astype(np.int64)
            inside &= (f >= 0.0) & (idx < self.counts[d])
            np.clip(idx, 0, self.counts[d] - 1, out=idx)
            flat = flat * self.counts[d] + idx
        flat[~inside] = -1
        return flat

    def centers(self, axis):
        d = AXES.index(axis)
        return self.mins[d] + (np.arange(self.counts[d]) + 0.5) * self.widths[d]

    def edges(self, axis):
        d = AXES.index(axis)
        return self.mins[d] + np.arange(self.counts[d] + 1) * self.widths[d]

    def __eq__(self, other):
        return (
            isinstance(other, PhaseSpaceGrid)
            and np.array_equal(self.mins, other.mins)
            and np.array_equal(self.maxs, other.maxs)
            and np.array_equal(self.counts, other.counts)
        )

    def __repr__(self):
        dims = "x".join(str(c) for c in self.counts.tolist())
        return f"PhaseSpaceGrid({dims})"
