"""Drift specifications, initial laws and the kinetic Ornstein-Uhlenbeck oracle.

A drift specification describes the N-particle system

    dX^i = [b1(t, X^i, Y^i) + (1/N) sum_j H(X^i - X^j, Y^i - Y^j)] dt + sigma dB^i
    dY^i = b2(t, X^i, Y^i) dt

Field callables act on whole arrays: ``b1(t, xs, ys)`` receives (N, d) arrays
and returns an (N, d) array.
"""

import importlib
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import linalg

from . import rng
from .ensemble import Ensemble
from .errors import DegenerateDensityError, InvalidModelError


@dataclass(frozen=True)
class LinearInteraction:
    """H(u, v) = -lam * u; the mean-field force is -lam * (x_i - mean(x))."""

    lam: float

    def H(self, du, dv):
        return -self.lam * du


@dataclass(frozen=True)
class GeneralInteraction:
    """Arbitrary pairwise kernel H(du, dv) -> R^d, broadcast over leading axes."""

    H: Callable


Interaction = Union[None, LinearInteraction, GeneralInteraction]


@dataclass(frozen=True)
class FhnTheta:
    """FitzHugh-Nagumo parameters (I, a_bar, b_bar, c_bar, lambda, sigma^2)."""

    I: float
    a_bar: float
    b_bar: float
    c_bar: float
    lam: float
    sigma2: float

    NAMES = ("I", "a_bar", "b_bar", "c_bar", "lambda", "sigma2")

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise InvalidModelError(f"FhN parameters must be finite, got {vals.tolist()}")
        if not self.sigma2 > 0:
            raise InvalidModelError(f"sigma2 must be positive, got {self.sigma2}")

    def as_array(self):
        return np.array([self.I, self.a_bar, self.b_bar, self.c_bar, self.lam, self.sigma2], dtype=float)

    @classmethod
    def from_array(cls, values):
        return cls(*[float(v) for v in values])

    def to_dict(self):
        return dict(zip(self.NAMES, self.as_array().tolist()))

    @classmethod
    def from_dict(cls, d):
        missing = [k for k in cls.NAMES if k not in d]
        if missing:
            raise InvalidModelError(f"theta is missing {missing}")
        return cls(*[float(d[k]) for k in cls.NAMES])

    @classmethod
    def from_classical(cls, I, a, b, c, lam, sigma2):
        """From the (I, a, b, c) form with G = (x + a - b y) / c."""
        return cls(I, a / c, b / c, 1.0 / c, lam, sigma2)


# Reference parameters used throughout tests and benchmarks.
FHN_REFERENCE = FhnTheta(I=0.5, a_bar=0.233, b_bar=0.267, c_bar=0.333, lam=0.3, sigma2=0.04)


@dataclass(frozen=True)
class DriftSpec:
    dim: int
    b1_single: Callable
    b2: Callable
    interaction: Interaction
    sigma: float
    name: str = "custom"
    fhn: Optional[FhnTheta] = None

    def __post_init__(self):
        if int(self.dim) < 1:
            raise InvalidModelError("dim must be a positive integer")
        # sigma = 0 is accepted as the deterministic limit
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise InvalidModelError(f"sigma must be finite and non-negative, got {self.sigma}")
        if self.interaction is not None and not isinstance(self.interaction, (LinearInteraction, GeneralInteraction)):
            raise InvalidModelError(f"unsupported interaction {self.interaction!r}")


def fhn_drift(theta: FhnTheta) -> DriftSpec:
    """Mean-field FitzHugh-Nagumo system in d = 1."""
    if not isinstance(theta, FhnTheta):
        theta = FhnTheta.from_array(theta)
    current, abar, bbar, cbar = theta.I, theta.a_bar, theta.b_bar, theta.c_bar

    # operation order is shared with the fused kernels; keep it
    def b1_single(t, x, y):
        return x - x * x * x / 3.0 - y + current

    def b2(t, x, y):
        return cbar * x + abar - bbar * y

    return DriftSpec(1, b1_single, b2, LinearInteraction(theta.lam), math.sqrt(theta.sigma2), "fhn", theta)


# Initial laws ---------------------------------------------------------------

@dataclass(frozen=True)
class GaussianLaw:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1 or mean.size % 2 or cov.shape != (mean.size, mean.size):
            raise InvalidModelError("Gaussian law needs a mean in R^{2d} and a 2d x 2d covariance")
        if not np.all(np.isfinite(cov)) or not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
            raise InvalidModelError("covariance is not symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-12 * max(1.0, np.abs(cov).max()):
            raise InvalidModelError("covariance is not positive semi-definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.mean.size // 2

    def cholesky(self):
        if not np.allclose(self.cov, self.cov.T, rtol=0, atol=1e-12):
            raise InvalidModelError("covariance is not symmetric")
        try:
            return np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError:
            raise InvalidModelError("covariance is not positive definite") from None

    def moments(self):
        return self.mean.copy(), self.cov.copy()


@dataclass(frozen=True)
class UniformLaw:
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.atleast_1d(np.asarray(self.low, dtype=float))
        high = np.atleast_1d(np.asarray(self.high, dtype=float))
        if low.shape != high.shape or low.size % 2 or not np.all(high > low):
            raise InvalidModelError("uniform box needs matching low < high bounds in R^{2d}")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @property
    def dim(self):
        return self.low.size // 2

    def moments(self):
        w = self.high - self.low
        return (self.low + self.high) / 2, np.diag(w * w / 12.0)


@dataclass(frozen=True)
class PointMass:
    z0: np.ndarray

    def __post_init__(self):
        z0 = np.atleast_1d(np.asarray(self.z0, dtype=float))
        if z0.size % 2:
            raise InvalidModelError("point mass location must lie in R^{2d}")
        object.__setattr__(self, "z0", z0)

    @property
    def dim(self):
        return self.z0.size // 2

    def moments(self):
        return self.z0.copy(), np.zeros((self.z0.size, self.z0.size))


@dataclass(frozen=True)
class Mixture:
    weights: np.ndarray
    components: Sequence

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or len(w) != len(self.components) or len(w) == 0 or np.any(w < 0) or w.sum() <= 0:
            raise InvalidModelError("mixture needs one non-negative weight per component")
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise InvalidModelError("mixture components must share a dimension")
        if any(isinstance(c, Mixture) for c in self.components):
            raise InvalidModelError("nested mixtures are not supported")
        object.__setattr__(self, "weights", w / w.sum())
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def dim(self):
        return self.components[0].dim

    def moments(self):
        means, covs = zip(*(c.moments() for c in self.components))
        mean = sum(w * m for w, m in zip(self.weights, means))
        second = sum(w * (c + np.outer(m, m)) for w, m, c in zip(self.weights, means, covs))
        return mean, second - np.outer(mean, mean)


InitialLaw = Union[GaussianLaw, UniformLaw, PointMass, Mixture]

# FhN default initial law: asymmetric so the odd moments stay informative
FHN_DEFAULT_INITIAL = GaussianLaw(mean=[1.0, 0.5], cov=[[0.5, 0.1], [0.1, 0.3]])


def _sample_simple(law, ids, seed):
    n = len(ids)
    if isinstance(law, GaussianLaw):
        chol = law.cholesky()
        xi = rng.normals(seed, ids, rng._INIT_GAUSS, 2 * law.dim, rng.INITIAL)
        return law.mean + xi @ chol.T
    if isinstance(law, UniformLaw):
        u = rng.uniforms(seed, ids, rng._INIT_GAUSS, 2 * law.dim, rng.INITIAL)
        return law.low + (law.high - law.low) * u
    if isinstance(law, PointMass):
        return np.broadcast_to(law.z0, (n, law.z0.size)).copy()
    raise InvalidModelError(f"unsupported initial law {law!r}")


def sample_initial(law: InitialLaw, n: int, seed: int, ids=None) -> Ensemble:
    """Draw n i.i.d. particles; particle i depends only on (seed, ids[i])."""
    if int(n) < 1:
        raise InvalidModelError("n must be at least 1")
    ids = np.arange(n, dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
    if isinstance(law, Mixture):
        u = rng.uniforms(seed, ids, rng._INIT_PICK, 1, rng.INITIAL)[:, 0]
        pick = np.searchsorted(np.cumsum(law.weights), u, side="right")
        pick = np.minimum(pick, len(law.components) - 1)
        z = np.empty((len(ids), 2 * law.dim))
        for j, comp in enumerate(law.components):
            mask = pick == j
            if mask.any():
                z[mask] = _sample_simple(comp, ids[mask], rng.derive_seed(seed, j + 1))
    else:
        z = _sample_simple(law, ids, seed)
    d = law.dim
    return Ensemble(z[:, :d], z[:, d:], 0.0, ids)


# Kinetic Ornstein-Uhlenbeck oracle -----------------------------------------

@dataclass(frozen=True)
class KineticOuParams:
    """Linear drift with additive noise on X only; Gaussian in, Gaussian out."""

    A11: np.ndarray
    A12: np.ndarray
    A21: np.ndarray
    A22: np.ndarray
    sigma: float
    initial: Union[GaussianLaw, PointMass]

    def __post_init__(self):
        mats = [np.atleast_2d(np.asarray(getattr(self, k), dtype=float)) for k in ("A11", "A12", "A21", "A22")]
        d = mats[0].shape[0]
        if any(m.shape != (d, d) for m in mats):
            raise InvalidModelError("A11, A12, A21, A22 must all be d x d")
        for k, m in zip(("A11", "A12", "A21", "A22"), mats):
            object.__setattr__(self, k, m)
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise InvalidModelError("sigma must be positive")
        if self.initial.dim != d:
            raise InvalidModelError("initial law dimension does not match the drift matrices")

    @property
    def dim(self):
        return self.A11.shape[0]

    @property
    def A(self):
        return np.block([[self.A11, self.A12], [self.A21, self.A22]])

    @property
    def Q(self):
        d = self.dim
        q = np.zeros((2 * d, 2 * d))
        q[:d, :d] = self.sigma ** 2 * np.eye(d)
        return q


def kou_drift(p: KineticOuParams) -> DriftSpec:
    A11, A12, A21, A22 = p.A11, p.A12, p.A21, p.A22

    def b1_single(t, x, y):
        return x @ A11.T + y @ A12.T

    def b2(t, x, y):
        return x @ A21.T + y @ A22.T

    return DriftSpec(p.dim, b1_single, b2, None, float(p.sigma), "kou")


# Damped rotation in (x, y) with noise on x; the law stays centred.
KOU_REFERENCE = KineticOuParams(
    A11=[[-1.0]], A12=[[-1.0]], A21=[[1.0]], A22=[[-0.5]], sigma=1.0,
    initial=GaussianLaw(mean=[0.0, 0.0], cov=[[0.5, 0.0], [0.0, 0.5]]))


def _rk4_lyapunov(A, Q, cov, t0, t1, nsteps):
    h = (t1 - t0) / nsteps

    def f(S):
        AS = A @ S
        return AS + AS.T + Q

    S = cov
    for _ in range(nsteps):
        k1 = f(S)
        k2 = f(S + 0.5 * h * k1)
        k3 = f(S + 0.5 * h * k2)
        k4 = f(S + h * k3)
        S = S + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return S


LYAPUNOV_MAX_STEP = 1e-3


def lyapunov_path(p: KineticOuParams, times):
    """Mean and covariance of the kinetic OU law at each (sorted) time.

    The covariance ODE dS/dt = A S + S A^T + Q is integrated with classical
    RK4 at step <= 1e-3; each segment is repeated at half step and the
    Richardson error estimate must stay below 1e-10 (relative).
    """
    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("times must be sorted and non-negative")
    A, Q = p.A, p.Q
    mean0, cov0 = p.initial.moments()
    means = np.empty((len(times), 2 * p.dim))
    covs = np.empty((len(times), 2 * p.dim, 2 * p.dim))
    S = cov0
    t_prev = 0.0
    for i, t in enumerate(times):
        if t > t_prev:
            n = max(1, math.ceil((t - t_prev) / LYAPUNOV_MAX_STEP - 1e-9))
            coarse = _rk4_lyapunov(A, Q, S, t_prev, t, n)
            fine = _rk4_lyapunov(A, Q, S, t_prev, t, 2 * n)
            err = np.max(np.abs(fine - coarse)) / 15.0
            if err > 1e-10 * (1.0 + np.max(np.abs(fine))):
                raise ArithmeticError(f"Lyapunov integration not converged (Richardson error {err:.3g})")
            S = fine
        means[i] = linalg.expm(t * A) @ mean0
        covs[i] = 0.5 * (S + S.T)
        t_prev = t
    return means, covs


def lyapunov_moments(p: KineticOuParams, t: float):
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return p.initial.moments()
    means, covs = lyapunov_path(p, [t])
    return means[0], covs[0]


def gaussian_pdf(mean, cov, z):
    z = np.asarray(z, dtype=float)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise DegenerateDensityError("covariance is singular; the density does not exist") from None
    dim = len(mean)
    diff = (z - mean).reshape(-1, dim)
    sol = linalg.solve_triangular(chol, diff.T, lower=True)
    quad = np.sum(sol * sol, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    vals = np.exp(-0.5 * quad - 0.5 * logdet - 0.5 * dim * math.log(2 * math.pi))
    return vals.reshape(z.shape[:-1]) if z.ndim > 1 else float(vals[0])


def density_at(p: KineticOuParams, t: float, x, y):
    """Exact density of the kinetic OU law at (x, y); broadcasts over leading axes."""
    mean, cov = lyapunov_moments(p, t)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.concatenate([np.atleast_1d(x), np.atleast_1d(y)], axis=-1)
    return gaussian_pdf(mean, cov, z)


def dissipativity_excess(spec: DriftSpec, k3: float, radius: float = 1e3, n: int = 401, t: float = 0.0):
    """max over a grid of x.b1(x, y) - k3 (1 + |(x, y)|^2); <= 0 means the bound holds.

    Only meaningful for d = 1 where the grid covers the (x, y) square.
    """
    g = np.linspace(-radius, radius, n)
    X, Y = np.meshgrid(g, g, indexing="ij")
    x = X.reshape(-1, 1)
    y = Y.reshape(-1, 1)
    lhs = np.sum(x * spec.b1_single(t, x, y), axis=1)
    rhs = k3 * (1.0 + x[:, 0] ** 2 + y[:, 0] ** 2)
    return float(np.max(lhs - rhs))


# JSON model documents ----------------------------------------------------------

@dataclass
class ModelDefinition:
    kind: str
    drift: DriftSpec
    initial: InitialLaw
    theta: Optional[FhnTheta] = None
    kou: Optional[KineticOuParams] = None
    document: dict = field(default_factory=dict)


def law_from_json(doc):
    kind = doc.get("kind")
    if kind == "gaussian":
        return GaussianLaw(doc["mean"], doc["cov"])
    if kind == "uniform":
        return UniformLaw(doc["low"], doc["high"])
    if kind == "point":
        return PointMass(doc["z0"])
    if kind == "mixture":
        return Mixture(doc["weights"], [law_from_json(c) for c in doc["components"]])
    raise InvalidModelError(f"unknown initial law kind {kind!r}")


def law_to_json(law):
    if isinstance(law, GaussianLaw):
        return {"kind": "gaussian", "mean": law.mean.tolist(), "cov": law.cov.tolist()}
    if isinstance(law, UniformLaw):
        return {"kind": "uniform", "low": law.low.tolist(), "high": law.high.tolist()}
    if isinstance(law, PointMass):
        return {"kind": "point", "z0": law.z0.tolist()}
    if isinstance(law, Mixture):
        return {"kind": "mixture", "weights": law.weights.tolist(),
                "components": [law_to_json(c) for c in law.components]}
    raise InvalidModelError(f"unsupported initial law {law!r}")


def _import_callable(path):
    module, _, attr = path.partition(":")
    if not attr:
        raise InvalidModelError(f"callable path must look like 'package.module:function', got {path!r}")
    try:
        return getattr(importlib.import_module(module), attr)
    except (ImportError, AttributeError) as exc:
        raise InvalidModelError(f"cannot import {path!r}: {exc}") from None


def model_from_json(doc) -> ModelDefinition:
    kind = doc.get("model")
    if "initial" not in doc:
        if kind != "fhn":
            raise InvalidModelError("model document needs an 'initial' law")
        initial = FHN_DEFAULT_INITIAL
    else:
        initial = law_from_json(doc["initial"])
    if kind == "fhn":
        theta = FhnTheta.from_dict(doc["theta"])
        if "sigma" in doc and not math.isclose(doc["sigma"] ** 2, theta.sigma2, rel_tol=1e-12):
            raise InvalidModelError("'sigma' disagrees with theta.sigma2")
        if initial.dim != 1:
            raise InvalidModelError("the FhN model lives in d = 1")
        return ModelDefinition("fhn", fhn_drift(theta), initial, theta=theta, document=doc)
    if kind == "kou":
        mats = doc["matrices"]
        if not isinstance(initial, (GaussianLaw, PointMass)):
            raise InvalidModelError("the kinetic OU oracle needs a Gaussian or point-mass initial law")
        p = KineticOuParams(mats["A11"], mats["A12"], mats["A21"], mats["A22"], float(doc["sigma"]), initial)
        return ModelDefinition("kou", kou_drift(p), initial, kou=p, document=doc)
    if kind == "custom":
        fields = doc["fields"]
        inter = fields.get("interaction")
        if inter is None:
            interaction = None
        elif inter.get("kind") == "linear":
            interaction = LinearInteraction(float(inter["lambda"]))
        elif inter.get("kind") == "general":
            interaction = GeneralInteraction(_import_callable(inter["H"]))
        else:
            raise InvalidModelError(f"unknown interaction {inter!r}")
        drift = DriftSpec(int(doc.get("dim", initial.dim)), _import_callable(fields["b1"]),
                          _import_callable(fields["b2"]), interaction, float(doc["sigma"]))
        return ModelDefinition("custom", drift, initial, document=doc)
    raise InvalidModelError(f"unknown model kind {kind!r}")


def model_to_json(model: ModelDefinition) -> dict:
    if model.kind == "fhn":
        return {"model": "fhn", "theta": model.theta.to_dict(), "sigma": model.drift.sigma,
                "initial": law_to_json(model.initial)}
    if model.kind == "kou":
        p = model.kou
        return {"model": "kou", "matrices": {k: getattr(p, k).tolist() for k in ("A11", "A12", "A21", "A22")},
                "sigma": p.sigma, "initial": law_to_json(model.initial)}
    return dict(model.document)
