"""Two-body dynamics and squared-angular-momentum moment rates."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from sdemoments.core import GaussianBelief
from sdemoments.engine import (
    Ensemble,
    NumericalAbortError,
    integrate_ode,
    uniform_grid,
    validate_invariant_derivatives,
)
from sdemoments.twobody import (
    GravModel,
    R_h_rate_bounds,
    R_h_rate_exact,
    TwoBodyState,
    _r_sq_rate_integrands,
    circular_orbit_state,
    h_invariant,
    h_r_sq_values,
    h_values,
    mu_h_rate_bounds,
    mu_h_rate_exact,
    norm_r_sq_values,
    squared_momentum_invariant,
    twobody_drift,
    twobody_sde_model,
    v_values,
    v_vector,
)

Q_ANISO = np.diag([0.005, 0.002, 0.003])


def random_states(rng, n):
    base = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    return base + 0.4 * rng.standard_normal((n, 6))


def test_circular_orbit_and_h():
    s = circular_orbit_state(1.0, 1.0)
    assert_allclose(s.r, [1.0, 0.0, 0.0])
    assert_allclose(s.rdot, [0.0, 1.0, 0.0])
    assert h_invariant(s) == pytest.approx(1.0, rel=1e-15)
    s2 = circular_orbit_state(4.0, 2.0)
    # h = ||r x v||^2 = (R * sqrt(mu/R))^2 = mu R
    assert h_invariant(s2) == pytest.approx(8.0, rel=1e-14)


def test_h_dot_form_matches_cross_form():
    rng = np.random.default_rng(5)
    x = random_states(rng, 1000)
    r, v = x[:, :3], x[:, 3:]
    cross = np.cross(r, v)
    assert_allclose(h_values(x), np.sum(cross * cross, axis=1), rtol=1e-10, atol=1e-12)


def test_v_vector_hand_value_and_identity():
    s = TwoBodyState(r=[1.0, 0.0, 0.0], rdot=[3.0, 2.0, 0.0])
    assert_allclose(v_vector(s), [0.0, 2.0, 0.0], rtol=0, atol=0)
    rng = np.random.default_rng(6)
    x = random_states(rng, 500)
    v = v_values(x)
    # ||v||^2 = h ||r||^2
    assert_allclose(np.sum(v * v, axis=1), h_r_sq_values(x), rtol=1e-10)
    # v is r with its radial component removed, so v . r = 0
    r = x[:, :3]
    dots = np.abs(np.sum(v * r, axis=1))
    scale = np.linalg.norm(v, axis=1) * np.linalg.norm(r, axis=1)
    assert np.max(dots / np.maximum(scale, 1e-300)) < 1e-10


def test_invariant_derivatives_and_drift_invariance():
    rng = np.random.default_rng(7)
    hfn = squared_momentum_invariant()
    g = GravModel(mu_grav=1.3, q=np.zeros(3))
    for _ in range(10):
        x = random_states(rng, 1)[0]
        validate_invariant_derivatives(hfn, x, rtol=1e-4)
        # h is conserved by the drift: grad . f = 0
        s = TwoBodyState(r=x[:3], rdot=x[3:])
        f = twobody_drift(s, g)
        scale = max(1.0, float(np.max(np.abs(hfn.grad(x)))) * float(np.max(np.abs(f))))
        assert abs(hfn.grad(x) @ f) < 1e-12 * scale


def test_hessian_block_symmetry():
    hfn = squared_momentum_invariant()
    x = np.array([1.0, -0.5, 0.25, 0.3, 1.1, -0.2])
    hh = hfn.hess_half(x)
    assert_allclose(hh, hh.T, rtol=0, atol=0)
    # velocity-velocity block is the projector-like matrix ||r||^2 I - r r^T,
    # which the noise contraction picks out
    r = x[:3]
    target = np.sum(r * r) * np.eye(3) - np.outer(r, r)
    assert_allclose(hh[3:, 3:], target, rtol=0, atol=0)
    # PSD with rank at most 2 (r itself is in the null space)
    eigs = np.linalg.eigvalsh(target)
    assert eigs[0] > -1e-12
    assert abs(target @ r).max() < 1e-12


def test_mu_h_rate_exact_hand_value():
    # tr(C) tr(Q) - tr(QC) at C = I, Q = diag(1,2,3): 3*6 - 6 = 12
    assert mu_h_rate_exact(np.eye(3), np.diag([1.0, 2.0, 3.0])) == pytest.approx(12.0)


def test_mu_h_bounds_hand_values_and_envelope():
    lo, hi = mu_h_rate_bounds(1.0, Q_ANISO)
    assert lo == pytest.approx(0.005, rel=1e-12)
    assert hi == pytest.approx(0.008, rel=1e-12)
    rng = np.random.default_rng(8)
    for _ in range(200):
        a = rng.standard_normal((3, 3))
        corr = a @ a.T
        exact = mu_h_rate_exact(corr, Q_ANISO)
        lo, hi = mu_h_rate_bounds(float(np.trace(corr)), Q_ANISO)
        assert lo - 1e-12 <= exact <= hi + 1e-12


def test_R_h_bounds_hand_values_and_envelope():
    lo, hi = R_h_rate_bounds(1.0, Q_ANISO)
    assert lo == pytest.approx(0.018, rel=1e-12)
    assert hi == pytest.approx(0.036, rel=1e-12)
    rng = np.random.default_rng(9)
    for _ in range(50):
        x = random_states(rng, 400)
        ens = Ensemble(t=0.0, states=x, master_seed=0)
        exact = R_h_rate_exact(ens, Q_ANISO)
        e_hr2 = float(np.mean(h_r_sq_values(x)))
        lo, hi = R_h_rate_bounds(e_hr2, Q_ANISO)
        assert lo - 1e-9 <= exact <= hi + 1e-9


def test_R_h_rate_exact_isotropic_closed_form():
    # at Q = pI the integrand collapses to 8 p ||v||^2
    rng = np.random.default_rng(10)
    x = random_states(rng, 300)
    p = 0.003
    ens = Ensemble(t=0.0, states=x, master_seed=0)
    got = R_h_rate_exact(ens, p * np.eye(3))
    assert got == pytest.approx(8.0 * p * np.mean(h_r_sq_values(x)), rel=1e-12)


def test_upper_bound_attained_by_eigenvector_alignment():
    # with r along the minimum eigenvector of Q and rdot along the maximum
    # one, the pointwise rate integrand sits exactly on the upper bound
    rng = np.random.default_rng(14)
    rot, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    eigs = np.array([0.002, 0.003, 0.005])
    qm = rot @ np.diag(eigs) @ rot.T
    qm = 0.5 * (qm + qm.T)
    r = 1.3 * rot[:, 0]  # minimum eigenvalue direction
    rd = 0.7 * rot[:, 2]  # maximum eigenvalue direction
    x = np.concatenate([r, rd])[None, :]
    integrand, _ = _r_sq_rate_integrands(x, qm)
    hr2 = float(h_r_sq_values(x)[0])
    upper = 2.0 * (np.sum(eigs) + 2.0 * eigs[2] - eigs[0]) * hr2
    assert integrand[0] == pytest.approx(upper, rel=1e-10)


def test_rate_form_routes_agree_pointwise():
    rng = np.random.default_rng(11)
    x = random_states(rng, 2000)
    v_form, raw_form = _r_sq_rate_integrands(x, Q_ANISO)
    scale = np.maximum(1.0, np.abs(v_form))
    assert np.max(np.abs(v_form - raw_form) / scale) < 1e-9


def test_zero_noise_orbit_conserves_h():
    g = GravModel(mu_grav=1.0, q=np.zeros(3))
    s0 = circular_orbit_state(1.0, 1.0)
    # eccentric perturbation, still a bound orbit
    y0 = s0.vector + np.array([0.0, 0.05, 0.02, 0.03, -0.04, 0.01])
    grid = uniform_grid(12.0, 0.001)

    def field(t, y):
        return twobody_drift(TwoBodyState(r=y[:3], rdot=y[3:]), g)

    path = integrate_ode(field, y0, grid)
    h = h_values(path)
    assert np.max(np.abs(h - h[0])) < 1e-8 * h[0]


def test_zero_noise_circular_orbit_closes():
    # one full period of the unit circular orbit returns to the start
    g = GravModel(mu_grav=1.0, q=np.zeros(3))
    y0 = circular_orbit_state(1.0, 1.0).vector
    period = 2.0 * np.pi
    grid = uniform_grid(period, period / 6400.0)

    def field(t, y):
        return twobody_drift(TwoBodyState(r=y[:3], rdot=y[3:]), g)

    path = integrate_ode(field, y0, grid)
    assert np.max(np.abs(path[-1] - y0)) < 1e-4 * np.max(np.abs(y0))


def test_grav_model_validation():
    with pytest.raises(ValueError):
        GravModel(mu_grav=-1.0, q=np.zeros(3))
    with pytest.raises(ValueError):
        GravModel(mu_grav=1.0, q=-np.eye(3))
    with pytest.raises(ValueError):
        GravModel(mu_grav=1.0, q=np.zeros(3), r_min=-0.1)
    # full symmetric PSD Q is fine for the formulas
    q = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 3.0]])
    g = GravModel(mu_grav=1.0, q=q)
    # C = I: tr(C) tr(Q) - tr(QC) = 3 tr(Q) - tr(Q) = 2 tr(Q)
    assert mu_h_rate_exact(np.eye(3), g.q) == pytest.approx(2.0 * np.trace(q), rel=1e-14)


def test_sampler_requires_diagonal_q():
    q = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 3.0]])
    with pytest.raises(ValueError, match="independent"):
        twobody_sde_model(GravModel(mu_grav=1.0, q=q))


def test_drift_exclusion_radius():
    g = GravModel(mu_grav=1.0, q=np.zeros(3), r_min=0.5)
    with pytest.raises(NumericalAbortError, match="exclusion"):
        twobody_drift(TwoBodyState(r=[0.1, 0.0, 0.0], rdot=[0.0, 0.0, 0.0]), g)


def test_R_h_rate_exact_respects_r_min():
    x = np.array([[0.01, 0.0, 0.0, 0.0, 1.0, 0.0], [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]])
    ens = Ensemble(t=0.0, states=x, master_seed=0)
    with pytest.raises(NumericalAbortError, match="exclusion"):
        R_h_rate_exact(ens, Q_ANISO, r_min=0.1)
