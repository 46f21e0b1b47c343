"""Time discretisation of the N-particle system with snapshot recording."""

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import rng
from ._backend import core
from .ensemble import Ensemble
from .errors import BlowUpError, ConfigError
from .models import DriftSpec, GeneralInteraction, InitialLaw, LinearInteraction, sample_initial

log = logging.getLogger(__name__)

SCHEMES = ("euler_maruyama", "heun")
MOMENT_ORDER = 8
TRAJECTORY_SCHEMA = "kinetic-mv/trajectory/v1"
# rows of the pairwise kernel evaluated at once on the O(N^2) path
_PAIR_CHUNK = 256


def exact_column_mean(a):
    return core.exact_mean_columns(np.ascontiguousarray(a, dtype=np.float64))


def interaction_force(e: Ensemble, spec: DriftSpec) -> np.ndarray:
    """Row i is (1/N) sum_j H(x_i - x_j, y_i - y_j), self term included."""
    inter = spec.interaction
    if inter is None:
        return np.zeros_like(e.xs)
    if isinstance(inter, LinearInteraction):
        xbar = exact_column_mean(e.xs)
        return -inter.lam * (e.xs - xbar)
    if isinstance(inter, GeneralInteraction):
        return pairwise_force(e, inter.H)
    raise TypeError(f"unsupported interaction {inter!r}")


def pairwise_force(e: Ensemble, H) -> np.ndarray:
    """Brute-force O(N^2) evaluation of the mean-field force."""
    out = np.empty_like(e.xs)
    for start in range(0, e.n, _PAIR_CHUNK):
        stop = min(start + _PAIR_CHUNK, e.n)
        du = e.xs[start:stop, None, :] - e.xs[None, :, :]
        dv = e.ys[start:stop, None, :] - e.ys[None, :, :]
        out[start:stop] = np.asarray(H(du, dv)).sum(axis=1) / e.n
    return out


def _drift(spec, t, xs, ys, ens_ids):
    tmp = Ensemble(xs, ys, t, ens_ids)
    ax = spec.b1_single(t, xs, ys) + interaction_force(tmp, spec)
    ay = spec.b2(t, xs, ys)
    return ax, ay


def step(e: Ensemble, spec: DriftSpec, dt: float, seed: int = 0, step_index: int = 0,
         scheme: str = "euler_maruyama", noise: Optional[np.ndarray] = None) -> Ensemble:
    """Advance the ensemble by dt. Noise acts on X only.

    The Gaussian increment of particle ``ids[i]`` is drawn from its own
    stream at counter ``step_index``; pass ``noise`` (N x d standard
    normals) to supply it explicitly.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if noise is None:
        xi = rng.normals(seed, e.ids, step_index, e.d)
    else:
        xi = np.asarray(noise, dtype=np.float64).reshape(e.xs.shape)
    noise_scale = spec.sigma * math.sqrt(dt)
    ax, ay = _drift(spec, e.t, e.xs, e.ys, e.ids)
    if scheme == "euler_maruyama":
        xn = e.xs + ax * dt + noise_scale * xi
        yn = e.ys + ay * dt
    elif scheme == "heun":
        xp = e.xs + ax * dt + noise_scale * xi
        yp = e.ys + ay * dt
        bx, by = _drift(spec, e.t + dt, xp, yp, e.ids)
        xn = e.xs + 0.5 * (ax + bx) * dt + noise_scale * xi
        yn = e.ys + 0.5 * (ay + by) * dt
    else:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    return Ensemble(xn, yn, e.t + dt, e.ids).check_finite(step_index)


@dataclass
class SimConfig:
    drift: DriftSpec
    initial: InitialLaw
    n: int
    t_end: float
    dt: float = 1e-3
    snapshot_times: Optional[Sequence[float]] = None
    seed: int = 0
    scheme: str = "euler_maruyama"
    threads: int = 1
    keep: str = "all"
    model_doc: Optional[dict] = None

    def __post_init__(self):
        if int(self.n) < 1:
            raise ConfigError("n must be at least 1", field="n")
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise ConfigError("t_end must be positive", field="t_end")
        if not (self.dt > 0 and self.dt <= self.t_end):
            raise ConfigError("dt must satisfy 0 < dt <= t_end", field="dt")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}", field="scheme")
        if self.keep not in ("all", "ends", "none"):
            raise ConfigError("keep must be 'all', 'ends' or 'none'", field="keep")
        if self.snapshot_times is None:
            self.snapshot_times = default_snapshots(self.t_end)
        times = np.asarray(self.snapshot_times, dtype=float)
        if times.ndim != 1 or np.any(np.diff(times) <= 0):
            raise ConfigError("snapshot times must be strictly increasing", field="snapshots")
        if times[0] < 0 or times[-1] > self.t_end * (1 + 1e-12):
            raise ConfigError("snapshot times must lie in [0, t_end]", field="snapshots")
        if times[0] != 0.0:
            times = np.concatenate([[0.0], times])
        self.snapshot_times = times
        self.n = int(self.n)
        self.seed = int(self.seed)

    def echo(self):
        return {
            "model": self.model_doc if self.model_doc is not None else {"model": self.drift.name},
            "n": self.n, "t_end": self.t_end, "dt": self.dt, "seed": self.seed,
            "scheme": self.scheme, "snapshots": [float(t) for t in self.snapshot_times],
        }


def default_snapshots(t_end, count=200):
    """count + 1 equally spaced times on [0, t_end] (spacing t_end / count)."""
    return np.linspace(0.0, t_end, count + 1)


@dataclass
class TrajectoryRecord:
    config: SimConfig
    times: np.ndarray
    ensembles: List[Optional[Ensemble]]
    moments: Optional[np.ndarray]  # (S, order+1, order+1) or None for d > 1
    steps: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def T(self):
        return float(self.times[-1])

    def moment_series(self, k, l):
        if self.moments is None:
            from .errors import UnsupportedDimensionError
            raise UnsupportedDimensionError("moments are only recorded for d = 1")
        return self.moments[:, k, l]

    def additive_series(self, k):
        return self.moment_series(k, 0) + self.moment_series(0, k)

    def snapshot_at(self, t):
        idx = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-12))
        if len(idx) == 0:
            return None
        return self.ensembles[idx[0]]

    def final(self):
        return self.ensembles[-1]

    def __eq__(self, other):
        if not isinstance(other, TrajectoryRecord):
            return NotImplemented
        if not np.array_equal(self.times, other.times) or len(self.ensembles) != len(other.ensembles):
            return False
        if (self.moments is None) != (other.moments is None):
            return False
        if self.moments is not None and not np.array_equal(self.moments, other.moments):
            return False
        return all((a is None and b is None) or (a is not None and b is not None and a == b)
                   for a, b in zip(self.ensembles, other.ensembles))

    # serialisation ---------------------------------------------------------

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        meta = {"schema_version": TRAJECTORY_SCHEMA, "seed": self.config.seed, "config": self.config.echo(),
                "steps": self.steps}
        meta.update(self.extra)
        with open(os.path.join(directory, "meta.json"), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
        write_snapshots_csv(os.path.join(directory, "snapshots.csv"), self)
        if self.moments is not None:
            write_moments_csv(os.path.join(directory, "moments.csv"), self.times, self.moments)


def fmt(v):
    return f"{float(v):.17g}"


def write_snapshots_csv(path, record):
    d = next(e.d for e in record.ensembles if e is not None) if any(e is not None for e in record.ensembles) else 1
    header = ["t", "particle_id"] + [f"x_{j}" for j in range(d)] + [f"y_{j}" for j in range(d)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t, e in zip(record.times, record.ensembles):
            if e is None:
                continue
            for i in range(e.n):
                w.writerow([fmt(t), int(e.ids[i])] + [fmt(v) for v in e.xs[i]] + [fmt(v) for v in e.ys[i]])


def write_moments_csv(path, times, moments):
    order = moments.shape[1] - 1
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "k", "l", "m_kl", "a_k"])
        for t, m in zip(times, moments):
            for k in range(order + 1):
                a_k = m[k, 0] + m[0, k]
                for l in range(order + 1 - k):
                    w.writerow([fmt(t), k, l, fmt(m[k, l]), fmt(a_k)])


def read_moments_csv(path):
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    times = np.unique(rows[:, 0])
    order = int(rows[:, 1].max())
    out = np.zeros((len(times), order + 1, order + 1))
    ti = np.searchsorted(times, rows[:, 0])
    out[ti, rows[:, 1].astype(int), rows[:, 2].astype(int)] = rows[:, 3]
    return times, out


def load_record(directory, config: SimConfig = None):
    """Rebuild a record from ``save`` output (ensembles and moments)."""
    with open(os.path.join(directory, "meta.json")) as fh:
        meta = json.load(fh)
    data = np.loadtxt(os.path.join(directory, "snapshots.csv"), delimiter=",", skiprows=1, ndmin=2)
    d = (data.shape[1] - 2) // 2
    times_all = np.asarray(meta["config"]["snapshots"], dtype=float)
    ensembles = []
    for t in times_all:
        rows = data[data[:, 0] == t]
        if len(rows) == 0:
            ensembles.append(None)
        else:
            ensembles.append(Ensemble(rows[:, 2:2 + d], rows[:, 2 + d:], t, rows[:, 1].astype(np.int64)))
    moments = None
    mpath = os.path.join(directory, "moments.csv")
    if os.path.exists(mpath):
        _, moments = read_moments_csv(mpath)
    return TrajectoryRecord(config, times_all, ensembles, moments, meta.get("steps", 0), {"meta": meta})


# simulation -----------------------------------------------------------------

def moment_table(e: Ensemble, order=MOMENT_ORDER, threads=1):
    return core.moment_table(e.xs[:, 0], e.ys[:, 0], order, threads)


def _use_fused(cfg):
    spec = cfg.drift
    return spec.fhn is not None and cfg.scheme == "euler_maruyama" and spec.dim == 1


def simulate(cfg: SimConfig, initial: Ensemble = None) -> TrajectoryRecord:
    """Run the particle system and record snapshots plus moments to order 8.

    Steps between consecutive snapshot times are uniform and land exactly on
    the snapshot time. The noise counter is the global step index, so a run
    is a pure function of (config, seed).
    """
    ens = sample_initial(cfg.initial, cfg.n, cfg.seed) if initial is None else initial.copy()
    if ens.d != cfg.drift.dim:
        raise ConfigError(f"initial law has d={ens.d}, drift expects d={cfg.drift.dim}", field="initial")
    ens.check_finite(0)
    times = cfg.snapshot_times
    record_moments = ens.d == 1
    keep = cfg.keep
    last = len(times) - 1

    def stored(i, e):
        if keep == "all" or (keep == "ends" and i in (0, last)):
            return e.copy()
        return None

    ensembles = [stored(0, ens)]
    moments = [moment_table(ens, threads=cfg.threads)] if record_moments else None
    fused = _use_fused(cfg)
    if fused:
        th = cfg.drift.fhn
        theta5 = (th.I, th.a_bar, th.b_bar, th.c_bar, th.lam)
        x = np.ascontiguousarray(ens.xs[:, 0])
        y = np.ascontiguousarray(ens.ys[:, 0])
    step_index = 0
    t_cur = 0.0
    for i in range(1, len(times)):
        t_next = float(times[i])
        gap = t_next - t_cur
        nsub = max(1, math.ceil(gap / cfg.dt - 1e-9))
        h = gap / nsub
        for j in range(nsub):
            if fused:
                bad = core.fhn_em_step(x, y, ens.ids, theta5, cfg.drift.sigma * math.sqrt(h), h,
                                       cfg.seed, step_index, cfg.threads)
                if bad:
                    raise BlowUpError(step_index, t_cur + (j + 1) * h, bad)
            else:
                ens = step(ens, cfg.drift, h, cfg.seed, step_index, cfg.scheme)
            step_index += 1
        t_cur = t_next
        if fused:
            ens = Ensemble(x[:, None].copy(), y[:, None].copy(), t_cur, ens.ids)
        else:
            ens.t = t_cur
        ensembles.append(stored(i, ens))
        if record_moments:
            moments.append(moment_table(ens, threads=cfg.threads))
    if ensembles[-1] is None and keep != "none":
        ensembles[-1] = ens.copy()
    moments = np.array(moments) if record_moments else None
    return TrajectoryRecord(cfg, np.asarray(times, dtype=float), ensembles, moments, step_index)
