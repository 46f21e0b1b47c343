"""Moment estimator of the six FitzHugh-Nagumo parameters.

Ito's formula applied to x^k + y^k under the mean-field FhN dynamics gives,
for k = 1..6,

    a_k(T) = sum_c theta_c * M[k, c] + Lambda_k

with theta = (I, a_bar, b_bar, c_bar, lambda, sigma^2) and

    M[k, I]       =  k   int m_{k-1,0}
    M[k, a_bar]   =  k   int m_{0,k-1}
    M[k, b_bar]   = -k   int m_{0,k}
    M[k, c_bar]   =  k   int m_{1,k-1}
    M[k, lambda]  = -k   int (m_{k,0} - m_{1,0} m_{k-1,0})
    M[k, sigma^2] =  k(k-1)/2 int m_{k-2,0}
    Lambda_k      =  a_k(0) + k int (m_{k,0} - m_{k+2,0}/3 - m_{k-1,1})

Replacing the moments by their empirical counterparts and inverting the
6 x 6 system gives the estimator.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy import linalg

from . import rng
from .errors import InsufficientDataError, SingularSystemError, UnsupportedDimensionError
from .models import FHN_DEFAULT_INITIAL, FhnTheta, fhn_drift
from .moments import trapezoid
from .simulator import SimConfig, simulate

log = logging.getLogger(__name__)

N_PARAMS = 6
COLUMNS = FhnTheta.NAMES
ILL_CONDITIONED = 1e12

# A term is coef * int prod_{(i, j) in factors} m_{i,j}(mu_t) dt.
Term = Tuple[float, Tuple[Tuple[int, int], ...]]


@dataclass(frozen=True)
class RowTemplate:
    k: int
    columns: Tuple[Tuple[Term, ...], ...]
    intercept: Tuple[Term, ...]

    def max_order(self):
        orders = [i + j for col in self.columns + (self.intercept,) for _, fs in col for i, j in fs]
        return max(orders)


def moment_ode_coefficients(k: int) -> RowTemplate:
    if not 1 <= k <= N_PARAMS:
        raise ValueError("k must be in 1..6")
    cols = (
        ((float(k), ((k - 1, 0),)),),
        ((float(k), ((0, k - 1),)),),
        ((-float(k), ((0, k),)),),
        ((float(k), ((1, k - 1),)),),
        ((-float(k), ((k, 0),)), (float(k), ((1, 0), (k - 1, 0)))),
        ((k * (k - 1) / 2.0, ((k - 2, 0),)),) if k >= 2 else (),
    )
    intercept = ((float(k), ((k, 0),)), (-k / 3.0, ((k + 2, 0),)), (-float(k), ((k - 1, 1),)))
    return RowTemplate(k, cols, intercept)


def _evaluate(terms, times, moments):
    total = 0.0
    for coef, factors in terms:
        series = np.ones(len(times))
        for i, j in factors:
            series = series * moments[:, i, j]
        total += coef * trapezoid(times, series)
    return total


@dataclass
class MomentSystem:
    A_hat: np.ndarray
    M_hat: np.ndarray
    Lambda_hat: np.ndarray
    cond: float
    T: float
    n: int = 0

    @property
    def rhs(self):
        return self.A_hat - self.Lambda_hat


def build_system(traj) -> MomentSystem:
    """Assemble (A, M, Lambda) from a trajectory's recorded moment tables."""
    if traj.moments is None:
        raise UnsupportedDimensionError("the FhN moment system needs d = 1")
    times = np.asarray(traj.times, dtype=float)
    moments = traj.moments
    if len(times) < 2:
        raise InsufficientDataError("need at least two snapshots")
    if times[0] != 0.0:
        raise InsufficientDataError("first snapshot must be at t = 0")
    templates = [moment_ode_coefficients(k) for k in range(1, N_PARAMS + 1)]
    need = max(t.max_order() for t in templates)
    if moments.shape[1] - 1 < need:
        raise InsufficientDataError(f"moments up to order {need} are required, got {moments.shape[1] - 1}")
    A = np.empty(N_PARAMS)
    M = np.empty((N_PARAMS, N_PARAMS))
    Lam = np.empty(N_PARAMS)
    for r, tpl in enumerate(templates):
        k = tpl.k
        A[r] = moments[-1, k, 0] + moments[-1, 0, k]
        for c, col in enumerate(tpl.columns):
            M[r, c] = _evaluate(col, times, moments)
        Lam[r] = moments[0, k, 0] + moments[0, 0, k] + _evaluate(tpl.intercept, times, moments)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(M)) and np.all(np.isfinite(Lam))):
        raise InsufficientDataError("moment system has non-finite entries")
    cond = float(np.linalg.cond(M))
    n = traj.ensembles[0].n if traj.ensembles and traj.ensembles[0] is not None else traj.config.n
    return MomentSystem(A, M, Lam, cond, float(times[-1]), n)


@dataclass
class ThetaEstimate:
    theta_hat: np.ndarray
    cond: float
    residual: float
    n: int
    T: float
    ill_conditioned: bool = False

    def theta(self):
        return FhnTheta(*self.theta_hat[:5], max(self.theta_hat[5], np.finfo(float).tiny))

    def to_json(self):
        return {"theta_hat": [float(v) for v in self.theta_hat], "cond": self.cond,
                "residual": self.residual, "n": self.n, "T": self.T,
                "ill_conditioned": self.ill_conditioned}


def solve_theta(sys: MomentSystem) -> ThetaEstimate:
    """theta_hat = M^{-1}(A - Lambda); least squares past cond 1e12."""
    M = sys.M_hat
    b = sys.rhs
    rank = int(np.linalg.matrix_rank(M))
    if rank < N_PARAMS:
        raise SingularSystemError(rank)
    cond = float(np.linalg.cond(M))
    ill = not cond <= ILL_CONDITIONED
    if ill:
        log.warning("moment matrix is ill-conditioned (cond=%.3g); using least squares", cond)
        theta, *_ = linalg.lstsq(M, b, lapack_driver="gelsy")
    else:
        lu, piv = linalg.lu_factor(M)
        theta = linalg.lu_solve((lu, piv), b)
    residual = float(np.linalg.norm(M @ theta - b))
    return ThetaEstimate(theta, cond, residual, sys.n, sys.T, ill)


def ito_residuals(traj, theta) -> np.ndarray:
    """a_k(T) - a_k(0) - [assembled right-hand side at theta], k = 1..6."""
    sys = build_system(traj)
    theta = theta.as_array() if isinstance(theta, FhnTheta) else np.asarray(theta, dtype=float)
    return sys.A_hat - sys.Lambda_hat - sys.M_hat @ theta


def estimate(traj) -> ThetaEstimate:
    return solve_theta(build_system(traj))


# Error scaling --------------------------------------------------------------

@dataclass
class ScalingReport:
    theta_star: np.ndarray
    Ns: List[int]
    rows: List[dict] = field(default_factory=list)
    rmse: Dict[int, float] = field(default_factory=dict)
    rmse_coord: Dict[int, np.ndarray] = field(default_factory=dict)
    slope: float = float("nan")
    slope_coord: np.ndarray = None
    failures: Dict[int, int] = field(default_factory=dict)


def loglog_slope(xs, ys):
    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.asarray(ys, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])


def fhn_config(theta, n, seed, t_end=10.0, dt=1e-3, n_snapshots=200, initial=None, threads=1, keep="ends"):
    return SimConfig(fhn_drift(theta), initial or FHN_DEFAULT_INITIAL, n, t_end, dt,
                     np.linspace(0.0, t_end, n_snapshots + 1), seed, threads=threads, keep=keep)


def replicate_seed(base_seed, n, r):
    return rng.derive_seed(base_seed, n, r)


def error_scaling_study(theta_star, Ns: Sequence[int], seeds: int, base_seed=0, runner=None, **sim_kwargs) -> ScalingReport:
    """RMSE of theta_hat over replicate seeds at each N, with a log-log slope.

    ``runner(config) -> TrajectoryRecord`` defaults to ``simulate``; pass a
    caching or pooled runner to share work between studies.
    """
    if len(Ns) < 3:
        raise ValueError("need at least three N levels")
    theta_star = theta_star if isinstance(theta_star, FhnTheta) else FhnTheta.from_array(theta_star)
    truth = theta_star.as_array()
    runner = runner or simulate
    report = ScalingReport(truth, list(Ns))
    for n in Ns:
        errs = []
        report.failures[n] = 0
        for r in range(seeds):
            cfg = fhn_config(theta_star, n, replicate_seed(base_seed, n, r), **sim_kwargs)
            try:
                est = estimate(runner(cfg))
            except (SingularSystemError, ArithmeticError) as exc:
                log.warning("N=%d seed #%d failed: %s", n, r, exc)
                report.failures[n] += 1
                continue
            err = est.theta_hat - truth
            errs.append(err)
            report.rows.append({"N": n, "seed": cfg.seed, "error": err, "abs_error": float(np.linalg.norm(err))})
        errs = np.array(errs)
        report.rmse_coord[n] = np.sqrt(np.mean(errs ** 2, axis=0))
        report.rmse[n] = float(np.sqrt(np.mean(np.sum(errs ** 2, axis=1))))
    report.slope = loglog_slope(Ns, [report.rmse[n] for n in Ns])
    report.slope_coord = np.array([loglog_slope(Ns, [report.rmse_coord[n][c] for n in Ns])
                                   for c in range(N_PARAMS)])
    return report
