"""Particle ensemble container."""

from dataclasses import dataclass, field

import numpy as np

from .errors import BlowUpError

BLOWUP_LIMIT = 1e8


@dataclass
class Ensemble:
    """N particles with positions ``xs`` and velocities ``ys`` (both N x d).

    ``ids`` label the random stream of each particle; permuting rows
    together with their ids permutes the trajectory.
    """

    xs: np.ndarray
    ys: np.ndarray
    t: float = 0.0
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.xs = np.ascontiguousarray(np.atleast_2d(np.asarray(self.xs, dtype=np.float64)))
        self.ys = np.ascontiguousarray(np.atleast_2d(np.asarray(self.ys, dtype=np.float64)))
        if self.xs.ndim != 2 or self.xs.shape != self.ys.shape:
            raise ValueError(f"xs and ys must share an (N, d) shape, got {self.xs.shape} and {self.ys.shape}")
        if self.xs.shape[0] < 1:
            raise ValueError("an ensemble needs at least one particle")
        if self.ids is None:
            self.ids = np.arange(self.xs.shape[0], dtype=np.int64)
        else:
            self.ids = np.asarray(self.ids, dtype=np.int64)
            if self.ids.shape != (self.xs.shape[0],):
                raise ValueError("ids must have one entry per particle")
        self.t = float(self.t)

    @property
    def n(self):
        return self.xs.shape[0]

    @property
    def d(self):
        return self.xs.shape[1]

    def states(self):
        """(N, 2d) array of stacked (x, y)."""
        return np.hstack([self.xs, self.ys])

    def copy(self):
        return Ensemble(self.xs.copy(), self.ys.copy(), self.t, self.ids.copy())

    def permuted(self, perm):
        perm = np.asarray(perm)
        return Ensemble(self.xs[perm], self.ys[perm], self.t, self.ids[perm])

    def check_finite(self, step=-1):
        bad = ~np.isfinite(self.xs) | ~np.isfinite(self.ys)
        bad |= (np.abs(self.xs) > BLOWUP_LIMIT) | (np.abs(self.ys) > BLOWUP_LIMIT)
        if bad.any():
            raise BlowUpError(step, self.t, int(np.count_nonzero(bad.any(axis=1))))
        return self

    def __eq__(self, other):
        if not isinstance(other, Ensemble):
            return NotImplemented
        return (self.t == other.t and np.array_equal(self.xs, other.xs)
                and np.array_equal(self.ys, other.ys) and np.array_equal(self.ids, other.ids))
