import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg

from kinetic_mv import models as M
from kinetic_mv.ensemble import Ensemble
from kinetic_mv.errors import DegenerateDensityError, InvalidModelError
from kinetic_mv.simulator import interaction_force, pairwise_force

# FhN fields ---------------------------------------------------------------------


def test_fhn_drift_examples():
    spec = M.fhn_drift(M.FhnTheta(0, 0, 0, 0, 0, 1))
    assert spec.b1_single(0, 2.0, 0.0) == pytest.approx(2 - 8 / 3, abs=1e-15)
    spec = M.fhn_drift(M.FhnTheta(1, 0, 0, 0, 0, 1))
    assert spec.b1_single(0, 0.0, 0.0) == 1.0
    assert spec.b2(0, np.array([3.0, -2.0]), np.array([1.0, 5.0])).tolist() == [0.0, 0.0]
    spec = M.fhn_drift(M.FhnTheta(0, 0.35, 0.4, 0.5, 0, 1))
    assert spec.b2(0, 1.0, 1.0) == pytest.approx(0.45, abs=1e-15)


def test_fhn_drift_structure():
    spec = M.fhn_drift(M.FHN_REFERENCE)
    assert spec.dim == 1
    assert isinstance(spec.interaction, M.LinearInteraction)
    assert spec.interaction.lam == 0.3
    assert spec.sigma == pytest.approx(0.2, rel=1e-15)


def test_fhn_fields_at_random_points():
    g = np.random.default_rng(0)
    for _ in range(20):
        th = g.uniform(-2, 2, 6)
        th[5] = abs(th[5]) + 0.01
        theta = M.FhnTheta.from_array(th)
        spec = M.fhn_drift(theta)
        x = g.uniform(-5, 5, 500)
        y = g.uniform(-5, 5, 500)
        F = x - x ** 3 / 3 - y + th[0]
        G = th[3] * x + th[1] - th[2] * y
        assert np.allclose(spec.b1_single(0, x, y), F, rtol=1e-13, atol=1e-12)
        assert np.allclose(spec.b2(0, x, y), G, rtol=1e-13, atol=1e-12)


@pytest.mark.parametrize("bad", [[np.nan, 0, 0, 0, 0, 1], [0, 0, np.inf, 0, 0, 1], [0, 0, 0, 0, 0, 0.0],
                                 [0, 0, 0, 0, 0, -1.0]])
def test_fhn_theta_rejects_invalid(bad):
    with pytest.raises(InvalidModelError):
        M.FhnTheta.from_array(bad)


def test_fhn_theta_roundtrip_and_classical_form():
    th = M.FHN_REFERENCE
    assert M.FhnTheta.from_dict(th.to_dict()) == th
    assert M.FhnTheta.from_array(th.as_array()) == th
    c = M.FhnTheta.from_classical(0.5, 0.7, 0.8, 3.0, 0.3, 0.04)
    assert c.c_bar == pytest.approx(1 / 3) and c.a_bar == pytest.approx(0.7 / 3) and c.b_bar == pytest.approx(0.8 / 3)
    with pytest.raises(InvalidModelError):
        M.FhnTheta.from_dict({"I": 1})


def test_fhn_dissipativity_on_grid():
    for current in (-2.0, 0.0, 0.5, 3.0):
        spec = M.fhn_drift(M.FhnTheta(current, 0.2, 0.3, 0.4, 0.3, 0.04))
        assert M.dissipativity_excess(spec, 1 + abs(current) + 1, radius=1e3, n=401) <= 0


def test_drift_spec_validation():
    f = lambda t, x, y: x
    with pytest.raises(InvalidModelError):
        M.DriftSpec(0, f, f, None, 1.0)
    with pytest.raises(InvalidModelError):
        M.DriftSpec(1, f, f, None, -1.0)
    with pytest.raises(InvalidModelError):
        M.DriftSpec(1, f, f, "linear", 1.0)


# Interaction ------------------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 300), st.floats(0, 5), st.integers(0, 2 ** 32))
def test_linear_interaction_matches_pairwise(n, lam, seed):
    g = np.random.default_rng(seed)
    e = Ensemble(g.normal(size=(n, 1)) * 3, g.normal(size=(n, 1)))
    spec = M.DriftSpec(1, None, None, M.LinearInteraction(lam), 1.0)
    fast = interaction_force(e, spec)
    slow = pairwise_force(e, lambda du, dv: -lam * du)
    assert np.allclose(fast, slow, rtol=0, atol=1e-12 * n * (1 + np.abs(e.xs).max()) * max(lam, 1))
    xbar = math.fsum(e.xs[:, 0]) / n
    assert np.array_equal(fast[:, 0], -lam * (e.xs[:, 0] - xbar))


# Initial laws ------------------------------------------------------------------------


def test_point_mass_sampling():
    e = M.sample_initial(M.PointMass([1.0, 2.0]), 3, seed=0)
    assert e.xs.tolist() == [[1.0]] * 3 and e.ys.tolist() == [[2.0]] * 3


def test_gaussian_sampling_mean():
    e = M.sample_initial(M.GaussianLaw([0.0, 0.0], np.eye(2)), 100000, seed=7)
    assert np.all(np.abs(e.states().mean(axis=0)) < 0.02)
    assert np.allclose(np.cov(e.states().T), np.eye(2), atol=0.02)


def test_sampling_is_deterministic_and_prefix_stable():
    law = M.Mixture([0.3, 0.7], [M.GaussianLaw([0, 0], np.eye(2)), M.UniformLaw([-1, -1], [1, 1])])
    a = M.sample_initial(law, 500, seed=3)
    b = M.sample_initial(law, 500, seed=3)
    c = M.sample_initial(law, 1000, seed=3)
    assert a == b
    assert np.array_equal(a.states(), c.states()[:500])


@pytest.mark.parametrize("law", [
    M.GaussianLaw([1.0, -2.0], [[2.0, 0.5], [0.5, 1.0]]),
    M.UniformLaw([-1.0, 0.0], [3.0, 0.5]),
    M.Mixture([0.25, 0.75], [M.GaussianLaw([-2, 0], np.eye(2)), M.GaussianLaw([2, 1], 0.5 * np.eye(2))]),
])
def test_sample_moments_match_law(law):
    n = 40000
    e = M.sample_initial(law, n, seed=11)
    mean, cov = law.moments()
    z = e.states()
    se = np.sqrt(np.diag(cov) / n)
    assert np.all(np.abs(z.mean(axis=0) - mean) < 5 * se)
    assert np.allclose(np.cov(z.T), cov, atol=0.05 * np.max(np.abs(cov)))


def test_initial_laws_have_sub_gaussian_moments():
    # (E|z|^{2p})^{1/p} grows at most linearly in p
    for law in (M.FHN_DEFAULT_INITIAL, M.KOU_REFERENCE.initial, M.UniformLaw([-2, -2], [2, 2])):
        r2 = np.sum(M.sample_initial(law, 20000, seed=5).states() ** 2, axis=1)
        growth = [np.mean(r2 ** p) ** (1 / p) / p for p in range(1, 9)]
        assert max(growth) <= 4 * np.mean(r2)


def test_invalid_laws():
    with pytest.raises(InvalidModelError):
        M.GaussianLaw([0, 0], [[1, 2], [2, 1]])
    with pytest.raises(InvalidModelError):
        M.UniformLaw([0, 0], [0, 1])
    with pytest.raises(InvalidModelError):
        M.Mixture([0.5, -0.6], [M.PointMass([0, 0]), M.PointMass([1, 1])])
    with pytest.raises(InvalidModelError):
        M.GaussianLaw([0, 0, 0], np.eye(3))


# Kinetic OU oracle -----------------------------------------------------------------


def _kou(A11=0.0, A12=0.0, A21=0.0, A22=0.0, sigma=1.0, initial=None):
    return M.KineticOuParams([[A11]], [[A12]], [[A21]], [[A22]], sigma, initial or M.PointMass([0.0, 0.0]))


def test_lyapunov_brownian_case():
    mean, cov = M.lyapunov_moments(_kou(), 0.7)
    assert np.allclose(cov, [[0.7, 0], [0, 0]], atol=1e-12)
    assert np.allclose(mean, 0)


def test_lyapunov_scalar_closed_form():
    p = _kou(A11=-1.0, sigma=math.sqrt(2.0))
    for t in (0.1, 1.0, 3.0):
        _, cov = M.lyapunov_moments(p, t)
        assert cov[0, 0] == pytest.approx(1 - math.exp(-2 * t), abs=1e-10)


def test_lyapunov_at_zero_returns_initial():
    law = M.GaussianLaw([0.3, -0.1], [[0.5, 0.1], [0.1, 0.2]])
    mean, cov = M.lyapunov_moments(_kou(A11=-1, initial=law), 0.0)
    assert np.array_equal(mean, law.mean) and np.array_equal(cov, law.cov)


def test_lyapunov_matches_van_loan_exponential():
    # independent route: covariance via the block exponential of [[A, Q], [0, -A^T]]
    p = M.KOU_REFERENCE
    A, Q = p.A, p.Q
    t = 1.3
    n = A.shape[0]
    H = np.block([[A, Q], [np.zeros_like(A), -A.T]])
    E = linalg.expm(H * t)
    F = E[:n, :n]
    G = E[:n, n:]
    cov_t = G @ F.T + F @ p.initial.cov @ F.T
    _, cov = M.lyapunov_moments(p, t)
    assert np.allclose(cov, cov_t, atol=1e-10)


def test_lyapunov_ode_residual():
    p = M.KOU_REFERENCE
    h = 1e-4
    for t in (0.2, 1.0, 2.5):
        _, c0 = M.lyapunov_moments(p, t - h)
        _, c1 = M.lyapunov_moments(p, t + h)
        _, c = M.lyapunov_moments(p, t)
        deriv = (c1 - c0) / (2 * h)
        assert np.max(np.abs(deriv - (p.A @ c + c @ p.A.T + p.Q))) < 1e-7


def test_density_examples():
    std = _kou(initial=M.GaussianLaw([0, 0], np.eye(2)))
    assert M.density_at(std, 0.0, 0.0, 0.0) == pytest.approx(1 / (2 * math.pi), rel=1e-14)
    shifted = _kou(initial=M.GaussianLaw([1, 1], np.eye(2)))
    assert M.density_at(shifted, 0.0, 1.0, 1.0) == pytest.approx(1 / (2 * math.pi), rel=1e-14)
    stationary = _kou(A11=-1.0, sigma=math.sqrt(2.0), initial=M.GaussianLaw([0, 0], np.eye(2)))
    _, cov = M.lyapunov_moments(stationary, 20.0)
    assert cov[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_density_degenerate_raises():
    with pytest.raises(DegenerateDensityError):
        M.density_at(_kou(), 1.0, 0.0, 0.0)


def test_kou_validation():
    with pytest.raises(InvalidModelError):
        _kou(sigma=0.0)
    with pytest.raises(InvalidModelError):
        M.KineticOuParams(np.eye(2), [[0.0]], [[0.0]], [[0.0]], 1.0, M.PointMass([0, 0]))


# JSON documents ----------------------------------------------------------------------


def test_model_json_roundtrip():
    for doc in (
        {"model": "fhn", "theta": M.FHN_REFERENCE.to_dict(), "initial": M.law_to_json(M.FHN_DEFAULT_INITIAL)},
        {"model": "kou", "matrices": {"A11": [[-1.0]], "A12": [[0.0]], "A21": [[1.0]], "A22": [[-0.5]]},
         "sigma": 1.0, "initial": {"kind": "point", "z0": [0.0, 1.0]}},
    ):
        m = M.model_from_json(doc)
        again = M.model_from_json(M.model_to_json(m))
        assert M.model_to_json(again) == M.model_to_json(m)


def test_custom_model_imports_callables():
    doc = {"model": "custom", "sigma": 0.5, "initial": {"kind": "point", "z0": [0.0, 0.0]},
           "fields": {"b1": "numpy:negative", "b2": "numpy:negative", "interaction": {"kind": "linear", "lambda": 1.0}}}
    with pytest.raises(InvalidModelError):
        M.model_from_json(dict(doc, fields={"b1": "nonexistent.module:f", "b2": "numpy:negative"}))
    with pytest.raises(InvalidModelError):
        M.model_from_json(dict(doc, model="weird"))


def test_fhn_sigma_must_agree():
    doc = {"model": "fhn", "theta": M.FHN_REFERENCE.to_dict(), "sigma": 0.5}
    with pytest.raises(InvalidModelError):
        M.model_from_json(doc)
