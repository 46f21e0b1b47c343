"""Pointwise kernel density estimation with Goldenshluger-Lepski bandwidth choice.

The density of the 2d-dimensional state (x, y) at a point is estimated by

    mu_h(x0, y0) = (1/N) sum_i K_h(x0 - x_i, y0 - y_i),   K_h(z) = h^{-2d} K(z / h),

with a product kernel K. Among a grid of bandwidths the selected one minimises
A_h + V_h where

    V_h = varpi |K|_2^2 log(N) / (N h^{2d}),
    A_h = max_{h' <= h} ((mu_h - mu_h')^2 - V_h - V_h')_+ .
"""

import math
from dataclasses import dataclass, field
from typing import Callable, List

import numpy as np

from ._backend import core
from .ensemble import Ensemble
from .errors import ConfigError, InsufficientDataError

# Largest power of two passing the kinetic OU oracle benchmark on calibration
# seeds (every smaller power passes too).
DEFAULT_VARPI = 0.125
GRID_RATIO = 1.25
UNIT_MASS_TOL = 1e-10


def _epanechnikov(u):
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def _epanechnikov4(u):
    # fourth-order member of the same family: 15/32 (1 - u^2)(3 - 7u^2)
    return np.where(np.abs(u) <= 1.0, (15.0 / 32.0) * (1.0 - u * u) * (3.0 - 7.0 * u * u), 0.0)


_GAUSS_CUT = 4.0
_GAUSS_NORM = 1.0 / (math.sqrt(2.0 * math.pi) * math.erf(_GAUSS_CUT / math.sqrt(2.0)))


def _gaussian_truncated(u):
    return np.where(np.abs(u) <= _GAUSS_CUT, _GAUSS_NORM * np.exp(-0.5 * u * u), 0.0)


def _uniform(u):
    return np.where(np.abs(u) <= 0.5, 1.0, 0.0)


# name -> (profile, support radius)
PROFILES = {
    "epanechnikov": (_epanechnikov, 1.0),
    "epanechnikov4": (_epanechnikov4, 1.0),
    "gaussian": (_gaussian_truncated, _GAUSS_CUT),
    "uniform": (_uniform, 0.5),
}


def _quad(f, a, b, pieces=64, nodes=32):
    """Composite Gauss-Legendre on [a, b]."""
    u, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(a, b, pieces + 1)
    total = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        total.append(half * (w * f(mid + half * u)))
    return math.fsum(np.concatenate(total))


@dataclass(frozen=True)
class Kernel:
    """Product kernel K(z) = prod_j k(z_j) on R^{2d} with compact support.

    ``order`` is the index of the first non-vanishing moment of the one
    dimensional profile (2 for symmetric non-negative kernels).
    """

    profile: str = "epanechnikov"
    dim: int = 1
    radius: float = field(init=False)
    l2_norm_sq: float = field(init=False)
    sup_norm: float = field(init=False)
    order: int = field(init=False)

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown kernel profile {self.profile!r}", "kernel")
        if self.dim < 1:
            raise ConfigError("kernel dimension must be positive", "kernel")
        k, r = PROFILES[self.profile]
        mass = _quad(k, -r, r)
        if abs(mass - 1.0) > UNIT_MASS_TOL:
            raise ValueError(f"kernel profile integrates to {mass!r}, not 1")
        D = 2 * self.dim
        object.__setattr__(self, "radius", r)
        object.__setattr__(self, "l2_norm_sq", _quad(lambda u: k(u) ** 2, -r, r) ** D)
        object.__setattr__(self, "sup_norm", float(np.max(np.abs(k(np.linspace(-r, r, 20001))))) ** D)
        order = None
        for j in range(1, 9):
            mj = _quad(lambda u: u ** j * k(u), -r, r)
            if abs(mj) > 1e-9:
                order = j
                break
        object.__setattr__(self, "order", order)

    @property
    def D(self):
        return 2 * self.dim

    def k1(self, u):
        return PROFILES[self.profile][0](u)

    def moment(self, j):
        """int u^j k(u) du of the one dimensional profile."""
        k, r = PROFILES[self.profile]
        return _quad(lambda u: u ** j * k(u), -r, r)

    def weights(self, diffs, h):
        """K_h at each row of ``diffs`` (n x 2d)."""
        u = diffs / h
        out = np.ones(len(diffs))
        for j in range(diffs.shape[1]):
            out = out * self.k1(u[:, j])
        return out * h ** (-self.D)


@dataclass(frozen=True)
class BandwidthGrid:
    hs: tuple
    n: int
    dim: int = 1

    def __post_init__(self):
        hs = tuple(sorted(float(h) for h in self.hs))
        object.__setattr__(self, "hs", hs)
        if not hs:
            raise ConfigError("bandwidth grid is empty", "grid")
        if self.n < 2:
            raise ConfigError("bandwidth grid needs N >= 2", "grid")
        lo = self.lower_bound(self.n, self.dim)
        if hs[0] < lo * (1 - 1e-12) or hs[-1] > 1.0:
            raise ConfigError(f"bandwidths must lie in [{lo:.6g}, 1]", "grid")
        if len(hs) > self.n:
            raise ConfigError("more bandwidths than particles", "grid")

    @staticmethod
    def lower_bound(n, dim=1):
        return (math.log(n) ** 2 / n) ** (1.0 / dim)

    @classmethod
    def geometric(cls, n, dim=1, count=None, ratio=GRID_RATIO, h_max=1.0):
        """h_max / ratio^j for j = 0, 1, ... down to the admissible lower bound."""
        lo = cls.lower_bound(n, dim)
        if lo > h_max:
            raise ConfigError(f"no admissible bandwidth for N={n}", "grid")
        fit = int(math.floor(math.log(h_max / lo) / math.log(ratio) + 1e-12)) + 1
        count = fit if count is None else count
        if count < 1 or count > fit:
            raise ConfigError(f"at most {fit} bandwidths fit in [{lo:.4g}, {h_max}] at ratio {ratio}", "grid")
        return cls(tuple(h_max / ratio ** j for j in range(count)), n, dim)

    def __len__(self):
        return len(self.hs)


class SpatialIndex:
    """Particles binned on a regular grid with sorted linear cell keys.

    Rows of ``points`` are sorted by cell; each query enumerates the cells
    meeting a box and reads the matching contiguous runs via searchsorted.
    """

    def __init__(self, points, cell):
        self.points = np.ascontiguousarray(points, dtype=float)
        self.cell = float(cell)
        if not self.cell > 0:
            raise ValueError("cell size must be positive")
        n, D = self.points.shape
        self.origin = self.points.min(axis=0)
        idx = np.floor((self.points - self.origin) / self.cell).astype(np.int64)
        self.shape = idx.max(axis=0) + 1
        keys = np.ravel_multi_index(tuple(idx.T), tuple(self.shape))
        self.order = np.argsort(keys, kind="stable")
        self.keys = keys[self.order]
        self.sorted_points = self.points[self.order]

    def candidates(self, center, radius):
        """Row indices (into ``points``) of every particle in the cube of half-side ``radius``."""
        radius = radius * (1.0 + 1e-9)
        lo = np.floor((center - radius - self.origin) / self.cell).astype(np.int64)
        hi = np.floor((center + radius - self.origin) / self.cell).astype(np.int64)
        lo = np.maximum(lo, 0)
        hi = np.minimum(hi, self.shape - 1)
        if np.any(lo > hi):
            return np.empty(0, dtype=np.int64)
        D = len(self.shape)
        lead = np.stack(np.meshgrid(*[np.arange(lo[j], hi[j] + 1) for j in range(D - 1)], indexing="ij"),
                        axis=-1).reshape(-1, D - 1) if D > 1 else np.zeros((1, 0), dtype=np.int64)
        first = np.column_stack([lead, np.full(len(lead), lo[-1])])
        last = np.column_stack([lead, np.full(len(lead), hi[-1])])
        k0 = np.ravel_multi_index(tuple(first.T), tuple(self.shape))
        k1 = np.ravel_multi_index(tuple(last.T), tuple(self.shape))
        starts = np.searchsorted(self.keys, k0, side="left")
        stops = np.searchsorted(self.keys, k1, side="right")
        parts = [np.arange(a, b) for a, b in zip(starts, stops) if b > a]
        if not parts:
            return np.empty(0, dtype=np.int64)
        return np.sort(self.order[np.concatenate(parts)])


def _query_point(e, x0, y0):
    z = np.concatenate([np.atleast_1d(np.asarray(x0, dtype=float)), np.atleast_1d(np.asarray(y0, dtype=float))])
    if z.shape != (2 * e.d,):
        raise ValueError(f"query point must have {2 * e.d} coordinates")
    return z


def kde_naive(e: Ensemble, kern: Kernel, h, x0, y0) -> float:
    """O(N) reference sum over every particle."""
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    z = _query_point(e, x0, y0)
    w = kern.weights(z - e.states(), h)
    return core.exact_sum(w) / e.n


def kde_at(e: Ensemble, kern: Kernel, h, x0, y0, index: SpatialIndex = None) -> float:
    """K_h estimate at (x0, y0) summing only particles in nearby cells."""
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    z = _query_point(e, x0, y0)
    reach = kern.radius * h
    if index is None:
        index = SpatialIndex(e.states(), reach)
    rows = index.candidates(z, reach)
    if rows.size == 0:
        return 0.0
    w = kern.weights(z - index.points[rows], h)
    return core.exact_sum(w) / e.n


def variance_term(h, n, varpi, kern: Kernel) -> float:
    if n < 2:
        raise InsufficientDataError("variance term needs N >= 2")
    return varpi * kern.l2_norm_sq * math.log(n) / n * float(h) ** (-kern.D)


@dataclass
class GlResult:
    estimate: float
    h_selected: float
    hs: np.ndarray
    mu_hat: np.ndarray
    V: np.ndarray
    A: np.ndarray
    varpi: float

    @property
    def index(self):
        return int(np.flatnonzero(self.hs == self.h_selected)[0])

    def to_json(self):
        return {"estimate": self.estimate, "h_selected": self.h_selected, "varpi": self.varpi,
                "table": [{"h": float(h), "mu_hat": float(m), "V": float(v), "A": float(a)}
                          for h, m, v, a in zip(self.hs, self.mu_hat, self.V, self.A)]}


def lepski_select(hs, mu_hat, V):
    """(index, A) for the argmin of A + V, ties resolved toward the largest h."""
    hs = np.asarray(hs, dtype=float)
    mu_hat = np.asarray(mu_hat, dtype=float)
    V = np.asarray(V, dtype=float)
    if hs.size == 0:
        raise ConfigError("bandwidth grid is empty", "grid")
    A = np.zeros(hs.size)
    for i in range(hs.size):
        smaller = hs <= hs[i]
        gaps = (mu_hat[i] - mu_hat[smaller]) ** 2 - (V[i] + V[smaller])
        A[i] = max(0.0, float(gaps.max()))
    crit = A + V
    best = crit.min()
    ties = np.flatnonzero(crit == best)
    return int(ties[np.argmax(hs[ties])]), A


def kde_curve(e: Ensemble, kern: Kernel, hs, x0, y0):
    pts = e.states()
    return np.array([kde_at(e, kern, h, x0, y0, SpatialIndex(pts, kern.radius * h)) for h in hs])


def gl_select(e: Ensemble, kern: Kernel, grid, varpi=DEFAULT_VARPI, x0=0.0, y0=0.0) -> GlResult:
    hs = np.asarray(grid.hs if isinstance(grid, BandwidthGrid) else grid, dtype=float)
    if hs.size == 0:
        raise ConfigError("bandwidth grid is empty", "grid")
    if kern.dim != e.d:
        raise ValueError("kernel and ensemble dimensions differ")
    mu = kde_curve(e, kern, hs, x0, y0)
    V = np.array([variance_term(h, e.n, varpi, kern) for h in hs])
    i, A = lepski_select(hs, mu, V)
    return GlResult(float(mu[i]), float(hs[i]), hs, mu, V, A, float(varpi))


def oracle_ratio(trials: List[GlResult], truth: float) -> float:
    """Seed-averaged GL squared error over the best fixed-h seed-averaged squared error.

    All trials must share one grid; a fixed h uses the same runs' mu_hat.
    """
    if not trials:
        raise InsufficientDataError("oracle ratio needs at least one trial")
    hs = trials[0].hs
    for r in trials:
        if not np.array_equal(r.hs, hs):
            raise ValueError("trials use different grids")
    gl = np.mean([(r.estimate - truth) ** 2 for r in trials])
    fixed = np.mean([(r.mu_hat - truth) ** 2 for r in trials], axis=0)
    best = fixed.min()
    if best == 0.0:
        return 1.0 if gl == 0.0 else math.inf
    return float(gl / best)


def smoothing_bias(density: Callable, kern: Kernel, h, x0, y0, nodes=24) -> float:
    """(K_h * mu)(x0, y0) - mu(x0, y0) for a d = 1 density by tensor Gauss-Legendre.

    This is the population bias that B_h bounds; it needs the true density.
    """
    if kern.dim != 1:
        raise ValueError("smoothing_bias is implemented for d = 1")
    r = kern.radius
    u, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(-r, r, 9)
    us = np.concatenate([0.5 * (b - a) * u + 0.5 * (a + b) for a, b in zip(edges[:-1], edges[1:])])
    ws = np.concatenate([0.5 * (b - a) * w for a, b in zip(edges[:-1], edges[1:])]) * kern.k1(us)
    U, W = np.meshgrid(us, us, indexing="ij")
    vals = density(x0 - h * U.ravel(), y0 - h * W.ravel())
    conv = math.fsum((np.outer(ws, ws).ravel() * vals))
    return conv - float(density(x0, y0))


def bias_term(density: Callable, kern: Kernel, hs, x0, y0):
    """B_h = max over h' <= h of |bias(h')|, for every h in the sorted grid."""
    b = np.abs([smoothing_bias(density, kern, h, x0, y0) for h in hs])
    order = np.argsort(hs)
    out = np.empty(len(hs))
    out[order] = np.maximum.accumulate(b[order])
    return out
