import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from kinetic_mv import models as M
from kinetic_mv.ensemble import Ensemble
from kinetic_mv.errors import ConfigError, InsufficientDataError
from kinetic_mv.gl import (DEFAULT_VARPI, PROFILES, BandwidthGrid, GlResult, Kernel, SpatialIndex, bias_term,
                           gl_select, kde_at, kde_naive, lepski_select, oracle_ratio, smoothing_bias, variance_term)


def gaussian_ensemble(n, seed, d=1):
    z = np.random.default_rng(seed).normal(size=(n, 2 * d))
    return Ensemble(z[:, :d], z[:, d:])


# kernels -------------------------------------------------------------------------------


@pytest.mark.parametrize("profile", sorted(PROFILES))
def test_kernel_constants_against_scipy_quadrature(profile):
    kern = Kernel(profile)
    k, r = PROFILES[profile]
    mass = integrate.quad(k, -r, r, points=[0.0], limit=200)[0]
    l2 = integrate.quad(lambda u: k(u) ** 2, -r, r, points=[0.0], limit=200)[0]
    assert mass == pytest.approx(1.0, abs=1e-10)
    assert kern.l2_norm_sq == pytest.approx(l2 ** 2, rel=1e-10)
    assert kern.radius == r
    assert kern.order == (4 if profile == "epanechnikov4" else 2)


def test_kernel_known_values():
    epa = Kernel("epanechnikov")
    assert epa.l2_norm_sq == pytest.approx(0.6 ** 2, rel=1e-12)
    assert epa.sup_norm == pytest.approx(0.75 ** 2, rel=1e-12)
    assert epa.moment(2) == pytest.approx(0.2, rel=1e-12)
    box = Kernel("uniform")
    assert box.l2_norm_sq == pytest.approx(1.0, rel=1e-12) and box.sup_norm == 1.0
    assert Kernel("uniform", dim=2).D == 4


def test_kernel_rejects_unknown_profile():
    with pytest.raises(ConfigError):
        Kernel("triangle")


# KDE -------------------------------------------------------------------------------------


def test_single_particle_unit_box():
    e = Ensemble([[0.3]], [[-0.2]])
    assert kde_at(e, Kernel("uniform"), 1.0, 0.3, -0.2) == 1.0


def test_far_particle_contributes_nothing():
    e = Ensemble([[0.0], [50.0]], [[0.0], [50.0]])
    kern = Kernel("epanechnikov")
    assert kde_at(e, kern, 0.5, 50.0, 50.0) == kern.sup_norm / 0.25 / 2
    assert kde_at(e, kern, 0.5, 25.0, 25.0) == 0.0


def test_gaussian_density_at_origin():
    n, h = 10 ** 5, 0.3
    e = gaussian_ensemble(n, 0)
    kern = Kernel("epanechnikov")
    est = kde_at(e, kern, h, 0.0, 0.0)
    truth = 1 / (2 * math.pi)
    density = lambda x, y: stats.norm.pdf(x) * stats.norm.pdf(y)
    bias = smoothing_bias(density, kern, h, 0.0, 0.0)
    w = kern.weights(-e.states(), h)
    se = np.std(w) / math.sqrt(n)
    assert abs(est - truth - bias) <= 3 * se
    assert abs(est - truth) <= 0.01


def test_smoothing_bias_matches_closed_form():
    # box kernel against a centred Gaussian: the convolution is a product of normal cdf differences
    kern = Kernel("uniform")
    s = 0.7
    density = lambda x, y: stats.norm.pdf(x, scale=s) * stats.norm.pdf(y, scale=s)
    for h in (0.1, 0.5, 1.0):
        conv = ((stats.norm.cdf(h / 2, scale=s) - stats.norm.cdf(-h / 2, scale=s)) / h) ** 2
        assert smoothing_bias(density, kern, h, 0.0, 0.0) == pytest.approx(conv - density(0, 0), abs=1e-12)
    b = bias_term(density, kern, [0.5, 0.1, 1.0], 0.0, 0.0)
    assert b[1] <= b[0] <= b[2]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 400), st.floats(0.05, 2.0), st.integers(0, 2 ** 32 - 1), st.sampled_from(sorted(PROFILES)),
       st.integers(1, 2))
def test_indexed_kde_matches_naive(n, h, seed, profile, d):
    g = np.random.default_rng(seed)
    e = Ensemble(g.normal(size=(n, d)), g.normal(size=(n, d)) * 2)
    kern = Kernel(profile, dim=d)
    z = e.states()[g.integers(n)] + g.normal(size=2 * d) * h
    a = kde_at(e, kern, h, z[:d], z[d:])
    b = kde_naive(e, kern, h, z[:d], z[d:])
    assert a == pytest.approx(b, rel=1e-12, abs=1e-300)


def test_spatial_index_candidates_cover_the_box():
    g = np.random.default_rng(3)
    pts = g.uniform(-3, 3, size=(2000, 2))
    idx = SpatialIndex(pts, 0.4)
    for _ in range(50):
        c = g.uniform(-4, 4, 2)
        inside = np.flatnonzero(np.all(np.abs(pts - c) <= 0.4, axis=1))
        got = idx.candidates(c, 0.4)
        assert set(inside) <= set(got)
        assert np.all(np.abs(pts[got] - c) <= 0.8 + 1e-9)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 6), st.floats(0.2, 1.0), st.integers(0, 2 ** 32 - 1))
def test_kde_integrates_to_one(n, h, seed):
    # the Epanechnikov estimate is a piecewise quadratic in each axis; Gauss-Legendre
    # with breakpoints at every kink is exact up to rounding
    g = np.random.default_rng(seed)
    e = Ensemble(g.normal(size=(n, 1)), g.normal(size=(n, 1)))
    kern = Kernel("epanechnikov")
    u, w = np.polynomial.legendre.leggauss(3)

    def nodes(c):
        br = np.unique(np.concatenate([c - h, c + h]))
        seg = [(a, b) for a, b in zip(br[:-1], br[1:]) if b > a]
        return (np.concatenate([0.5 * (b - a) * u + 0.5 * (a + b) for a, b in seg]),
                np.concatenate([0.5 * (b - a) * w for a, b in seg]))

    xs, wx = nodes(e.xs[:, 0])
    ys, wy = nodes(e.ys[:, 0])
    idx = SpatialIndex(e.states(), h)
    vals = np.array([[kde_at(e, kern, h, x, y, idx) for y in ys] for x in xs])
    assert math.fsum((np.outer(wx, wy) * vals).ravel()) == pytest.approx(1.0, abs=1e-6)


def test_kde_rejects_bad_input():
    e = gaussian_ensemble(5, 1)
    with pytest.raises(ValueError):
        kde_at(e, Kernel(), 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        kde_at(e, Kernel(), 0.5, [0.0, 1.0], 0.0)


# variance term and grid ------------------------------------------------------------------


def test_variance_term_examples():
    box = Kernel("uniform")
    assert variance_term(1.0, math.e, 1.0, box) == pytest.approx(1 / math.e, rel=1e-12)
    epa = Kernel()
    v = variance_term(0.4, 1000, 0.5, epa)
    assert variance_term(0.2, 1000, 0.5, epa) == pytest.approx(4 * v, rel=1e-14)
    ratio = variance_term(0.4, 2000, 0.5, epa) / v
    assert ratio == pytest.approx(math.log(2000) / math.log(1000) / 2, rel=1e-14)
    hs = np.linspace(0.1, 1, 20)
    assert np.all(np.diff([variance_term(h, 500, 1.0, epa) for h in hs]) < 0)
    with pytest.raises(InsufficientDataError):
        variance_term(0.5, 1, 1.0, epa)


def test_bandwidth_grid_bounds():
    n = 10 ** 4
    lo = BandwidthGrid.lower_bound(n)
    assert lo == pytest.approx(math.log(n) ** 2 / n)
    g = BandwidthGrid.geometric(n, count=12)
    assert len(g) == 12 and g.hs[-1] == 1.0
    assert np.allclose(np.diff(np.log(g.hs)), math.log(1.25))
    full = BandwidthGrid.geometric(n)
    assert full.hs[0] >= lo and full.hs[0] / 1.25 < lo
    with pytest.raises(ConfigError):
        BandwidthGrid((lo / 2, 0.5), n)
    with pytest.raises(ConfigError):
        BandwidthGrid((0.5, 1.5), n)
    with pytest.raises(ConfigError):
        BandwidthGrid((), n)
    with pytest.raises(ConfigError):
        BandwidthGrid((0.7, 0.8, 0.9, 1.0), 3)
    with pytest.raises(ConfigError):
        BandwidthGrid.geometric(10, count=50)
    assert BandwidthGrid.lower_bound(n, 2) == pytest.approx(math.sqrt(lo))


# Lepski selection ------------------------------------------------------------------------


def test_single_bandwidth_grid():
    e = gaussian_ensemble(1000, 2)
    res = gl_select(e, Kernel(), [0.5])
    assert res.h_selected == 0.5 and res.A.tolist() == [0.0]
    assert oracle_ratio([res], 0.1) == 1.0


def test_ties_go_to_largest_bandwidth():
    i, A = lepski_select([0.1, 0.2, 0.4], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0])
    assert i == 2 and A.tolist() == [0, 0, 0]


def test_lepski_against_brute_force():
    g = np.random.default_rng(11)
    for _ in range(200):
        m = g.integers(1, 8)
        hs = np.sort(g.uniform(0.1, 1, m))
        mu = g.normal(size=m)
        V = g.uniform(0, 0.5, m)
        i, A = lepski_select(hs, mu, V)
        ref = [max([0.0] + [(mu[a] - mu[b]) ** 2 - V[a] - V[b] for b in range(m) if hs[b] <= hs[a]])
               for a in range(m)]
        assert np.allclose(A, ref)
        crit = A + V
        assert crit[i] == crit.min()
        assert hs[i] == max(hs[crit == crit.min()])


def test_selection_sandwich_and_json():
    e = gaussian_ensemble(5000, 4)
    grid = BandwidthGrid.geometric(5000, count=8)
    res = gl_select(e, Kernel(), grid, x0=0.2, y0=-0.1)
    assert res.mu_hat.min() <= res.estimate <= res.mu_hat.max()
    assert res.h_selected in grid.hs
    js = res.to_json()
    assert set(js) == {"estimate", "h_selected", "varpi", "table"}
    assert js["varpi"] == DEFAULT_VARPI and len(js["table"]) == 8
    assert res.hs[res.index] == res.h_selected


def test_uniform_density_selects_largest_bandwidth():
    n = 10 ** 4
    grid = BandwidthGrid.geometric(n, count=12)
    law = M.UniformLaw([-2.0, -2.0], [2.0, 2.0])
    hits = 0
    for seed in range(50):
        e = M.sample_initial(law, n, seed)
        hits += gl_select(e, Kernel(), grid).h_selected == grid.hs[-1]
    assert hits >= 45


def test_peaked_mixture_selects_small_bandwidth():
    n = 10 ** 5
    grid = BandwidthGrid.geometric(n, count=20)
    law = M.Mixture([0.5, 0.5], [M.GaussianLaw([-0.3, 0.0], 0.05 ** 2 * np.eye(2)),
                                 M.GaussianLaw([0.3, 0.0], 0.05 ** 2 * np.eye(2))])
    below = 0
    for seed in range(10):
        e = M.sample_initial(law, n, seed)
        below += gl_select(e, Kernel(), grid, x0=0.3, y0=0.0).h_selected < grid.hs[-1]
    assert below >= 9


def test_oracle_ratio_definition():
    hs = np.array([0.2, 0.5])
    trials = [GlResult(1.1, 0.5, hs, np.array([1.2, 1.1]), np.zeros(2), np.zeros(2), 1.0),
              GlResult(1.2, 0.2, hs, np.array([1.2, 0.8]), np.zeros(2), np.zeros(2), 1.0)]
    gl = (0.1 ** 2 + 0.2 ** 2) / 2
    fixed = min((0.2 ** 2 + 0.2 ** 2) / 2, (0.1 ** 2 + 0.2 ** 2) / 2)
    assert oracle_ratio(trials, 1.0) == pytest.approx(gl / fixed)
    with pytest.raises(InsufficientDataError):
        oracle_ratio([], 1.0)
    with pytest.raises(ValueError):
        oracle_ratio([trials[0], GlResult(1.0, 0.3, np.array([0.3]), np.ones(1), np.zeros(1), np.zeros(1), 1.0)],
                     1.0)


def test_empty_grid_raises():
    with pytest.raises(ConfigError):
        gl_select(gaussian_ensemble(10, 0), Kernel(), [])
    with pytest.raises(ConfigError):
        lepski_select([], [], [])
