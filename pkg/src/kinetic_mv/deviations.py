"""Monte Carlo checks of the concentration of empirical functionals.

For a test function phi and a time measure rho the centred functional is

    E^N = int rho(dt) (1/N) sum_i phi(t, X_t^i, Y_t^i) - int phi d(rho x mu_t).

Replicate runs give the tail frequencies P(|E^N| >= gamma), which are
compared with the sub-gamma form exp(-N gamma^2 / (2 (v + c gamma))).
"""

import hashlib
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy import optimize, stats

from . import rng
from ._backend import core
from .errors import BlowUpError, ConfigError, InsufficientDataError
from .models import KineticOuParams, lyapunov_moments
from .moments import sliced_w1
from .simulator import SimConfig, load_record, simulate

log = logging.getLogger(__name__)

REFERENCE_TAG = 0x5EF


# Test functions ---------------------------------------------------------------

@dataclass(frozen=True)
class Bounded:
    sup: float


@dataclass(frozen=True)
class PolyGrowth:
    C_phi: float
    k: int


@dataclass(frozen=True)
class DiracAt:
    t: float


@dataclass(frozen=True)
class UniformOn:
    """Uniform probability on [t0, t1], integrated by the trapezoid rule on the snapshots inside."""

    t0: float
    t1: float

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise ConfigError("UniformOn needs t1 > t0", "phi")


@dataclass(frozen=True)
class TestFunction:
    """phi(t, x, y) for x, y of shape (N, d), returning shape (N,)."""

    __test__ = False  # not a pytest class

    name: str
    evaluator: Callable
    cls: Union[Bounded, PolyGrowth]
    rho: Union[DiracAt, UniformOn]

    def __call__(self, t, x, y):
        return np.asarray(self.evaluator(t, np.atleast_2d(x), np.atleast_2d(y)), dtype=float)

    def check_class(self, x, y, t=0.0):
        """True if the growth class holds at the sampled points."""
        v = np.abs(self(t, x, y))
        if isinstance(self.cls, Bounded):
            return bool(np.all(v <= self.cls.sup * (1 + 1e-12)))
        r = np.sqrt(np.sum(np.atleast_2d(x) ** 2, axis=1) + np.sum(np.atleast_2d(y) ** 2, axis=1))
        return bool(np.all(v <= self.cls.C_phi * r ** self.cls.k * (1 + 1e-12) + 1e-300))


def _x0(t, x, y):
    return x[:, 0]


def _one(t, x, y):
    return np.ones(x.shape[0])


def _sq(t, x, y):
    return np.sum(x * x, axis=1) + np.sum(y * y, axis=1)


def _cos_x(t, x, y):
    return np.cos(x[:, 0])


# name -> (evaluator, growth class)
NAMED = {
    "x": (_x0, PolyGrowth(1.0, 1)),
    "one": (_one, Bounded(1.0)),
    "x2+y2": (_sq, PolyGrowth(1.0, 2)),
    "cos_x": (_cos_x, Bounded(1.0)),
}


def named_test_function(name, rho):
    if name not in NAMED:
        raise ConfigError(f"unknown test function {name!r}; choose from {sorted(NAMED)}", "phi")
    f, cls = NAMED[name]
    return TestFunction(name, f, cls, rho)


# Functionals ------------------------------------------------------------------

def _particle_mean(phi, t, e):
    return core.exact_sum(phi(t, e.xs, e.ys)) / e.n


def _ensemble_at(traj, t):
    e = traj.snapshot_at(t)
    if e is None:
        raise InsufficientDataError(f"no stored snapshot at t={t}")
    return e


def empirical_average(traj, phi: TestFunction) -> float:
    """int rho(dt) (1/N) sum_i phi(t, X_t^i, Y_t^i) over the recorded snapshots."""
    rho = phi.rho
    if isinstance(rho, DiracAt):
        return _particle_mean(phi, rho.t, _ensemble_at(traj, rho.t))
    times = np.asarray(traj.times)
    inside = (times >= rho.t0 - 1e-12) & (times <= rho.t1 + 1e-12)
    ts = times[inside]
    if len(ts) < 2 or abs(ts[0] - rho.t0) > 1e-12 or abs(ts[-1] - rho.t1) > 1e-12:
        raise InsufficientDataError("snapshots do not cover the end points of the time measure")
    vals = np.array([_particle_mean(phi, t, _ensemble_at(traj, t)) for t in ts])
    terms = np.diff(ts) * (vals[1:] + vals[:-1]) / 2.0
    return core.exact_sum(terms) / (rho.t1 - rho.t0)


def empirical_functional(traj, phi: TestFunction, reference: float) -> float:
    value = empirical_average(traj, phi) - reference
    if isinstance(phi.cls, Bounded) and abs(value) > 2 * phi.cls.sup * (1 + 1e-12):
        raise AssertionError(f"bounded functional exceeds 2 sup: {value}")
    return value


def required_snapshots(phi: TestFunction, t_end, spacing=None):
    """Snapshot times needed to evaluate ``phi``'s time measure."""
    rho = phi.rho
    if isinstance(rho, DiracAt):
        if not 0 <= rho.t <= t_end:
            raise ConfigError("DiracAt time outside [0, t_end]", "phi")
        return np.unique([0.0, float(rho.t), float(t_end)])
    if rho.t1 > t_end:
        raise ConfigError("UniformOn interval exceeds t_end", "phi")
    spacing = spacing or (rho.t1 - rho.t0) / 200
    m = max(1, int(math.ceil((rho.t1 - rho.t0) / spacing - 1e-9)))
    return np.unique(np.concatenate([[0.0, float(t_end)], np.linspace(rho.t0, rho.t1, m + 1)]))


# Reference values -------------------------------------------------------------

def kou_reference(p: KineticOuParams, phi: TestFunction, nodes=40, time_nodes=64) -> float:
    """int phi d(rho x mu_t) for the Gaussian kinetic OU law, by Gauss-Hermite quadrature."""
    z, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / w.sum()
    D = 2 * p.dim
    grids = np.meshgrid(*([z] * D), indexing="ij")
    Z = np.stack([g.ravel() for g in grids], axis=1)
    W = np.prod(np.stack(np.meshgrid(*([w] * D), indexing="ij")).reshape(D, -1), axis=0)

    def at(t):
        mean, cov = lyapunov_moments(p, t)
        vals, vecs = np.linalg.eigh(cov)
        root = vecs * np.sqrt(np.clip(vals, 0.0, None))
        pts = mean + Z @ root.T
        return math.fsum(W * phi(t, pts[:, :p.dim], pts[:, p.dim:]))

    rho = phi.rho
    if isinstance(rho, DiracAt):
        return at(rho.t)
    u, wu = np.polynomial.legendre.leggauss(time_nodes)
    ts = rho.t0 + (u + 1.0) * (rho.t1 - rho.t0) / 2.0
    return math.fsum(0.5 * wi * at(t) for t, wi in zip(ts, wu))


def cache_dir():
    return os.environ.get("KINETIC_MV_CACHE", os.path.join(os.path.expanduser("~"), ".cache", "kinetic_mv"))


def config_hash(cfg: SimConfig) -> str:
    doc = cfg.echo()
    doc["initial"] = repr(cfg.initial)
    doc["sigma"] = cfg.drift.sigma
    doc["fhn"] = cfg.drift.fhn.to_dict() if cfg.drift.fhn is not None else None
    blob = json.dumps(doc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def reference_run(cfg: SimConfig, directory=None, runner=simulate):
    """Big-N run stored on disk under a hash of its configuration.

    A second call with the same configuration reads the stored snapshots.
    """
    directory = directory or cache_dir()
    path = os.path.join(directory, f"ref-{config_hash(cfg)}")
    if os.path.exists(os.path.join(path, "snapshots.csv")):
        return load_record(path, cfg)
    rec = runner(cfg)
    rec.save(path + ".tmp")
    os.replace(path + ".tmp", path)
    return rec


# Tail experiment --------------------------------------------------------------

def wilson_interval(k, n, z=1.959963984540054):
    if n == 0:
        return 0.0, 1.0
    p = k / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


def tail_probabilities(values, gammas):
    """P(|E| >= gamma) for each gamma on one shared sample (monotone in gamma)."""
    a = np.sort(np.abs(np.asarray(values, dtype=float)))
    g = np.asarray(gammas, dtype=float)
    counts = a.size - np.searchsorted(a, g, side="left")
    return counts, counts / a.size


def fit_subgamma(Ns, gammas, p_hat):
    """(v, c) minimising sum (log p + N g^2 / (2 (v + c g)))^2 over points with p > 0."""
    Ns = np.asarray(Ns, dtype=float)
    g = np.asarray(gammas, dtype=float)
    p = np.asarray(p_hat, dtype=float)
    keep = (p > 0) & (g > 0)
    if keep.sum() < 2:
        raise InsufficientDataError("need at least two positive tail frequencies to fit")
    Ns, g, lp = Ns[keep], g[keep], np.log(p[keep])

    def resid(q):
        v, c = np.exp(q[0]), q[1]
        return lp + Ns * g * g / (2.0 * (v + c * g))

    v0 = float(np.median(Ns * g * g / (2.0 * np.maximum(-lp, 1e-3))))
    sol = optimize.least_squares(resid, x0=[math.log(max(v0, 1e-12)), 0.0],
                                 bounds=([-50.0, 0.0], [50.0, np.inf]))
    return float(np.exp(sol.x[0])), float(sol.x[1])


def envelope(N, gamma, v, c, c1=1.0):
    return np.minimum(1.0, c1 * np.exp(-np.asarray(N) * np.asarray(gamma) ** 2 / (2.0 * (v + c * np.asarray(gamma)))))


def linear_r2(xs, ys):
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if np.ptp(ys) == 0:
        return 1.0
    return float(stats.linregress(xs, ys).rvalue ** 2)


@dataclass
class TailReport:
    Ns: List[int]
    gammas: List[float]
    R: Dict[int, int]
    failures: Dict[int, int]
    functionals: Dict[int, np.ndarray]
    rows: List[dict] = field(default_factory=list)
    v_hat: float = float("nan")
    c_hat: float = float("nan")
    c1_hat: float = float("nan")
    r2: float = float("nan")
    gamma_ref: Optional[float] = None

    def table(self, N):
        return [r for r in self.rows if r["N"] == N]

    def p_hat(self, N, gamma):
        for r in self.rows:
            if r["N"] == N and r["gamma"] == gamma:
                return r["p_hat"]
        raise KeyError((N, gamma))

    def fit_json(self):
        return {"v_hat": self.v_hat, "c_hat": self.c_hat, "c1_hat": self.c1_hat, "r2": self.r2,
                "gamma_ref": self.gamma_ref, "R": {str(k): v for k, v in self.R.items()},
                "failures": {str(k): v for k, v in self.failures.items()}}


def replicate_functionals(make_config: Callable, phi, reference, N, R, seed, threads=1, runner=simulate):
    """E^N for replicates r = 0..R-1, NaN where the run blew up."""

    def one(r):
        cfg = make_config(N, rng.derive_seed(seed, N, r))
        try:
            return empirical_functional(runner(cfg), phi, reference)
        except BlowUpError as exc:
            log.warning("replicate %d at N=%d blew up: %s", r, N, exc)
            return float("nan")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            vals = list(pool.map(one, range(R)))
    else:
        vals = [one(r) for r in range(R)]
    return np.array(vals)


def tail_experiment(make_config: Callable, phi: TestFunction, Ns: Sequence[int], R: int,
                    gammas: Sequence[float], seed: int, reference: float, gamma_ref=None,
                    threads=1, runner=simulate, functionals=None) -> TailReport:
    """Two-sided tail frequencies of E^N with Wilson intervals and a sub-gamma fit.

    ``make_config(N, seed)`` returns the SimConfig of one replicate. Passing
    precomputed ``functionals`` {N: values} skips the simulations.
    ``gamma_ref`` selects the level at which linearity of -log P in N is scored.
    """
    if R < 1:
        raise ConfigError("R must be positive", "R")
    if R < 200:
        log.warning("R=%d is small for tail estimates", R)
    gammas = sorted(float(g) for g in gammas)
    if gamma_ref is not None and gamma_ref not in gammas:
        gammas = sorted(gammas + [float(gamma_ref)])
    report = TailReport(list(Ns), gammas, {}, {}, {}, gamma_ref=gamma_ref)
    for N in Ns:
        vals = functionals[N] if functionals is not None else \
            replicate_functionals(make_config, phi, reference, N, R, seed, threads, runner)
        ok = vals[np.isfinite(vals)]
        report.functionals[N] = ok
        report.R[N] = int(ok.size)
        report.failures[N] = int(vals.size - ok.size)
        counts, p = tail_probabilities(ok, gammas)
        for g, k, ph in zip(gammas, counts, p):
            lo, hi = wilson_interval(int(k), ok.size)
            report.rows.append({"N": N, "gamma": g, "count": int(k), "p_hat": float(ph), "ci_lo": lo, "ci_hi": hi})
    Nn = np.array([r["N"] for r in report.rows], dtype=float)
    gg = np.array([r["gamma"] for r in report.rows])
    pp = np.array([r["p_hat"] for r in report.rows])
    try:
        report.v_hat, report.c_hat = fit_subgamma(Nn, gg, pp)
        env = envelope(Nn, gg, report.v_hat, report.c_hat)
        pos = pp > 0
        report.c1_hat = float(np.max(pp[pos] / env[pos])) if pos.any() else 1.0
    except InsufficientDataError as exc:
        log.warning("sub-gamma fit skipped: %s", exc)
    if gamma_ref is not None:
        ps = np.array([report.p_hat(N, gamma_ref) for N in Ns])
        if np.all(ps > 0):
            report.r2 = linear_r2(Ns, -np.log(ps))
    return report


# Propagation of chaos ---------------------------------------------------------

@dataclass
class ChaosRow:
    N: int
    w1_mean: float
    w1_se: float


def chaos_experiment(make_config: Callable, Ns: Sequence[int], seed: int, n_ref: int,
                     seeds: int = 20, n_proj: int = 64, runner=simulate, reference=None) -> List[ChaosRow]:
    """Mean sliced W1 between mu_T^N and a reference ensemble at N_ref."""
    ref = reference if reference is not None else runner(make_config(n_ref, rng.derive_seed(seed, REFERENCE_TAG))).final()
    rows = []
    for N in Ns:
        vals = []
        for r in range(seeds):
            e = runner(make_config(N, rng.derive_seed(seed, N, r))).final()
            vals.append(sliced_w1(e, ref, n_proj, seed=rng.derive_seed(seed, N, r, 1)))
        vals = np.array(vals)
        se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
        rows.append(ChaosRow(int(N), float(vals.mean()), se))
    return rows
