"""Nodal profiles on a one-dimensional grid."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class Profile:
    """A piecewise-linear function given by nodal values.

    Attributes
    ----------
    grid : ndarray
        Strictly increasing nodes.
    values : ndarray
        Value at each node.
    energy : float or None
        Discrete energy, when the profile came out of a solve.
    residual_sup : float or None
        Sup-norm residual of the discrete Euler-Lagrange system.
    """

    grid: np.ndarray
    values: np.ndarray
    energy: float | None = None
    residual_sup: float | None = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.grid.shape != self.values.shape or self.grid.ndim != 1:
            raise ValueError("grid and values must be 1D arrays of equal length")
        if self.grid.size >= 2 and np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")

    def __call__(self, s):
        """Linear interpolation, extended by the end values."""
        return np.interp(s, self.grid, self.values)

    def derivative(self, s):
        """Slope of the interpolant (right-continuous, zero outside)."""
        s = np.asarray(s, dtype=float)
        slopes = np.diff(self.values) / np.diff(self.grid)
        idx = np.searchsorted(self.grid, s, side="right") - 1
        inside = (idx >= 0) & (idx < slopes.size)
        out = np.zeros_like(s)
        out[inside] = slopes[idx[inside]]
        return out

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "u"])
            for xi, ui in zip(self.grid, self.values):
                w.writerow([repr(float(xi)), repr(float(ui))])
        return path
