import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate, stats

from kinetic_mv import models as M
from kinetic_mv.ensemble import Ensemble
from kinetic_mv.errors import InsufficientDataError, UnsupportedDimensionError
from kinetic_mv.moments import (MomentTable, additive_moment, integrated_moments_json, mixed_moment, sliced_w1,
                                time_integrated_moment, trapezoid, wasserstein1_1d)
from kinetic_mv.simulator import SimConfig, simulate

finite = st.floats(-50, 50, allow_nan=False, width=64)


def ens(x, y):
    return Ensemble(np.asarray(x, dtype=float)[:, None], np.asarray(y, dtype=float)[:, None])


def test_point_mass_moments():
    e = ens([2.0], [3.0])
    assert mixed_moment(e, 1, 1) == 6.0
    assert mixed_moment(e, 2, 0) == 4.0
    assert mixed_moment(e, 0, 0) == 1.0
    assert additive_moment(e, 1) == 5.0
    assert additive_moment(e, 2) == 13.0


def test_gaussian_second_moment():
    g = np.random.default_rng(12)
    e = ens(g.normal(size=10 ** 6), g.normal(size=10 ** 6))
    assert abs(mixed_moment(e, 2, 0) - 1) < 0.006


def test_mirrored_pairs_have_zero_odd_moments():
    g = np.random.default_rng(1)
    x = g.normal(size=500) * 3
    y = g.normal(size=500)
    e = ens(np.concatenate([x, -x]), np.concatenate([y, -y]))
    for k in (1, 3, 5, 7):
        assert additive_moment(e, k) == 0.0


def test_moment_table_agrees_with_direct_moments():
    g = np.random.default_rng(2)
    e = ens(g.normal(size=777) * 2, g.normal(size=777) + 1)
    tab = MomentTable.of(e)
    for k in range(9):
        for l in range(9 - k):
            assert tab.mixed(k, l) == mixed_moment(e, k, l)
        if k:
            assert tab.additive(k) == tab.mixed(k, 0) + tab.mixed(0, k)
            assert tab.additive(k) == additive_moment(e, k)
    with pytest.raises(InsufficientDataError):
        tab.mixed(5, 4)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 60), elements=finite), st.integers(0, 4), st.integers(0, 4))
def test_moment_matches_exact_rational_sum(x, k, l):
    y = x[::-1].copy()
    got = mixed_moment(ens(x, y), k, l)
    exact = [Fraction(float(a)) ** k * Fraction(float(b)) ** l for a, b in zip(x, y)]
    ref = sum(exact) / len(x)
    scale = sum(abs(t) for t in exact) / len(x)
    # only the per-particle products are rounded; the sum itself is exact
    assert abs(Fraction(got) - ref) <= Fraction(1e-15) * (k + l + 1) * scale + Fraction(1e-300)


def test_shuffling_changes_nothing():
    g = np.random.default_rng(3)
    x = g.normal(size=5000) * 10.0 ** g.integers(-3, 3, 5000)
    y = g.normal(size=5000)
    e = ens(x, y)
    p = g.permutation(5000)
    f = ens(x[p], y[p])
    for k, l in [(1, 0), (2, 3), (4, 4), (8, 0), (0, 7)]:
        a, b = mixed_moment(e, k, l), mixed_moment(f, k, l)
        assert abs(a - b) <= 1e-12 * abs(a)


def test_moments_reject_higher_dimension():
    e = Ensemble(np.zeros((3, 2)), np.zeros((3, 2)))
    with pytest.raises(UnsupportedDimensionError):
        mixed_moment(e, 1, 0)
    with pytest.raises(UnsupportedDimensionError):
        sliced_w1(e, e)


# time integrals -------------------------------------------------------------------------


def still_record(n=5, t_end=2.0):
    zero = lambda t, x, y: np.zeros_like(x)
    law = M.GaussianLaw([0.5, -1.0], np.eye(2))
    cfg = SimConfig(M.DriftSpec(1, zero, zero, None, 0.0), law, n, t_end, 0.1, np.linspace(0, t_end, 7))
    return simulate(cfg)


def test_constant_trajectory_integrals():
    rec = still_record()
    m0 = rec.moments[0]
    for k, l in [(0, 0), (1, 0), (2, 1), (0, 8)]:
        assert time_integrated_moment(rec, k, l) == pytest.approx(2.0 * m0[k, l], rel=1e-14)
    assert time_integrated_moment(rec, 0, 0) == 2.0
    js = integrated_moments_json(rec)
    assert len(js) == 45 and js["int_m_0_0"] == 2.0


def test_trapezoid_needs_two_points():
    with pytest.raises(InsufficientDataError):
        trapezoid([0.0], [1.0])


@pytest.mark.parametrize("f", [np.sin, np.exp, lambda t: 1 / (1 + t * t), lambda t: np.cos(3 * t) * t])
def test_trapezoid_second_order(f):
    exact = integrate.quad(f, 0, 2, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
    errs = []
    for n in (50, 100):
        t = np.linspace(0, 2, n + 1)
        errs.append(abs(trapezoid(t, f(t)) - exact))
    assert 3.0 <= errs[0] / errs[1] <= 5.0


def test_kinetic_ou_integrated_second_moment():
    p = M.KOU_REFERENCE
    n, snaps = 20000, 21
    times = np.linspace(0, 1, snaps)
    cfg = SimConfig(M.kou_drift(p), p.initial, n, 1.0, 1e-3, times, seed=99, keep="all")
    rec = simulate(cfg)
    got = time_integrated_moment(rec, 2, 0)
    fine = np.linspace(0, 1, 2001)
    means, covs = M.lyapunov_path(p, fine)
    curve = covs[:, 0, 0] + means[:, 0] ** 2
    exact = integrate.simpson(curve, x=fine)
    curv = np.max(np.abs(np.gradient(np.gradient(curve, fine), fine)))
    quad_bound = (times[1] - times[0]) ** 2 / 12 * curv
    per_particle = np.array([[e.xs[i, 0] ** 2 for e in rec.ensembles] for i in range(n)])
    se = np.std(integrate.trapezoid(per_particle, x=times, axis=1)) / math.sqrt(n)
    assert abs(got - exact) <= 2 * (quad_bound + 3 * se)


# Wasserstein ----------------------------------------------------------------------------


def test_w1_examples():
    assert wasserstein1_1d([0.0, 1.0, 5.0], [5.0, 0.0, 1.0]) == 0.0
    assert wasserstein1_1d([0.0], [3.0]) == 3.0
    assert wasserstein1_1d([0.0, 1.0], [1.0, 2.0]) == 1.0
    pairings = [np.mean(np.abs(np.array([0.0, 1.0]) - np.array(q))) for q in itertools.permutations([1.0, 2.0])]
    assert min(pairings) == 1.0


def test_w1_empty_raises():
    with pytest.raises(InsufficientDataError):
        wasserstein1_1d([], [1.0])


def test_w1_matches_scipy():
    g = np.random.default_rng(7)
    for n in (1, 10, 1000):
        a, b = g.normal(size=n), g.standard_t(3, size=n)
        assert wasserstein1_1d(a, b) == pytest.approx(stats.wasserstein_distance(a, b), rel=1e-12, abs=1e-15)


def test_w1_subsamples_larger_sample():
    g = np.random.default_rng(8)
    a, b = g.normal(size=300), g.normal(size=100)
    w = wasserstein1_1d(a, b, seed=4)
    assert w == wasserstein1_1d(a, b, seed=4) and w > 0
    assert wasserstein1_1d(b, a, seed=4) == w


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2 ** 32 - 1))
def test_w1_metric_axioms(n, seed):
    g = np.random.default_rng(seed)
    a, b, c = (g.normal(size=n) * s for s in (1, 2, 3))
    ab, bc, ac = wasserstein1_1d(a, b), wasserstein1_1d(b, c), wasserstein1_1d(a, c)
    assert ab == wasserstein1_1d(b, a)
    assert ac <= ab + bc + 1e-12
    assert ab >= 0


def test_sliced_w1_identical_and_translation():
    g = np.random.default_rng(9)
    e = ens(g.normal(size=500), g.normal(size=500))
    assert sliced_w1(e, e.copy(), seed=1) == 0.0
    v = np.array([0.6, -0.8])
    moved = ens(e.xs[:, 0] + v[0], e.ys[:, 0] + v[1])
    n_proj = 400
    vals = [sliced_w1(e, moved, n_proj=1, seed=s) for s in range(n_proj)]
    est = sliced_w1(e, moved, n_proj=n_proj, seed=3)
    expected = 2 * np.linalg.norm(v) / math.pi
    se = np.std(vals) / math.sqrt(n_proj)
    assert abs(est - expected) <= 3 * se + 1e-12


@pytest.mark.parametrize("delta", [0.1, 0.5, 2.0])
def test_sliced_w1_homogeneous_in_separation(delta):
    a = ens([0.0] * 4, [0.0] * 4)
    near = ens([delta] * 4, [0.0] * 4)
    far = ens([2 * delta] * 4, [0.0] * 4)
    d1, d2 = sliced_w1(a, near, seed=5), sliced_w1(a, far, seed=5)
    assert d2 > d1
    assert d2 == pytest.approx(2 * d1, rel=1e-12)


def test_sliced_w1_rejects_zero_projections():
    e = ens([0.0], [0.0])
    with pytest.raises(ValueError):
        sliced_w1(e, e, n_proj=0)
