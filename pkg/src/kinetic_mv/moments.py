"""Empirical moments, time integrals and Wasserstein-1 distances."""

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from ._backend import core
from .ensemble import Ensemble
from .errors import InsufficientDataError, UnsupportedDimensionError

MAX_ORDER = 8


@dataclass(frozen=True)
class MomentTable:
    """m[k, l] = mean(x^k y^l) for k + l <= order, at time t."""

    t: float
    m: np.ndarray

    def __post_init__(self):
        if self.m[0, 0] != 1.0:
            raise ValueError("m_00 must equal 1")

    @property
    def order(self):
        return self.m.shape[0] - 1

    def mixed(self, k, l):
        if k + l > self.order:
            raise InsufficientDataError(f"m_{k},{l} exceeds the recorded order {self.order}")
        return float(self.m[k, l])

    def additive(self, k):
        return self.mixed(k, 0) + self.mixed(0, k)

    @classmethod
    def of(cls, e: Ensemble, order=MAX_ORDER):
        _require_scalar(e)
        return cls(e.t, core.moment_table(e.xs[:, 0], e.ys[:, 0], order))


def _require_scalar(e):
    if e.d != 1:
        raise UnsupportedDimensionError(f"moment functionals are defined for d = 1, got d = {e.d}")


def _power(v, k):
    # repeated multiplication, same order as the moment-table kernel
    out = np.ones_like(v)
    for _ in range(k):
        out = out * v
    return out


def mixed_moment(e: Ensemble, k: int, l: int) -> float:
    """(1/N) sum_i x_i^k y_i^l, correctly rounded."""
    _require_scalar(e)
    if k < 0 or l < 0:
        raise ValueError("moment orders must be non-negative")
    x = e.xs[:, 0]
    y = e.ys[:, 0]
    return core.exact_sum(_power(x, k) * _power(y, l)) / e.n


def additive_moment(e: Ensemble, k: int) -> float:
    if k < 1:
        raise ValueError("additive moments start at k = 1")
    return mixed_moment(e, k, 0) + mixed_moment(e, 0, k)


def trapezoid(times, values) -> float:
    """Trapezoid rule with a correctly rounded final sum."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(times) < 2:
        raise InsufficientDataError("time integration needs at least two snapshots")
    terms = np.diff(times) * (values[1:] + values[:-1]) / 2.0
    return core.exact_sum(terms)


def time_integrated_moment(traj, k: int, l: int) -> float:
    """Trapezoid approximation of the integral of m_{k,l}(mu_t^N) over [0, T]."""
    if traj.moments is None:
        raise UnsupportedDimensionError("trajectory has no moment table (d != 1)")
    if k + l > traj.moments.shape[1] - 1:
        raise InsufficientDataError(f"m_{k},{l} was not recorded")
    return trapezoid(traj.times, traj.moments[:, k, l])


def wasserstein1_1d(a, b, seed=0) -> float:
    """Exact W1 between two equal-size empirical measures on the line.

    A larger sample is first subsampled uniformly without replacement to the
    smaller size (deterministic in ``seed``).
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise InsufficientDataError("W1 needs non-empty samples")
    if a.size != b.size:
        g = rng.generator(seed, 0x77)
        if a.size > b.size:
            a = g.choice(a, size=b.size, replace=False)
        else:
            b = g.choice(b, size=a.size, replace=False)
    a = np.sort(a)
    b = np.sort(b)
    return core.exact_sum(np.abs(a - b)) / a.size


def projection_directions(n_proj, seed):
    theta = rng.generator(seed, 0x51CE).uniform(0.0, 2.0 * math.pi, size=n_proj)
    return np.column_stack([np.cos(theta), np.sin(theta)])


def sliced_w1(ea: Ensemble, eb: Ensemble, n_proj: int = 64, seed=0) -> float:
    """Mean of 1-d W1 over random directions of the (x, y) plane."""
    _require_scalar(ea)
    _require_scalar(eb)
    if n_proj < 1:
        raise ValueError("n_proj must be at least 1")
    za = ea.states()
    zb = eb.states()
    dirs = projection_directions(n_proj, seed)
    vals = [wasserstein1_1d(za @ u, zb @ u, seed=rng.derive_seed(seed, j)) for j, u in enumerate(dirs)]
    return float(np.mean(vals))


def integrated_moments_json(traj, order=MAX_ORDER):
    """{"int_m_k_l": value} for every recorded (k, l)."""
    return {f"int_m_{k}_{l}": time_integrated_moment(traj, k, l)
            for k in range(order + 1) for l in range(order + 1 - k)}
