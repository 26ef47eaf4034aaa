"""Torque-free rigid body under white-noise torques.

Drift field, kinetic-energy invariant, and the closed moment ODEs for the
angular-velocity mean/covariance and the kinetic-energy mean/variance under
Gaussian closure of the third moments. The covariance rate is computed by
two independent algebraic routes and cross-checked on every call.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import (
    GaussianBelief,
    as_finite_vector,
    diagonal_entries,
    square_matrix,
    sym_matrix,
)
from .engine import (
    InvariantFn,
    NumericalAbortError,
    SdeModel,
    integrate_ode,
)

__all__ = [
    "InertiaModel",
    "RigidBodyMoments",
    "cov_rate",
    "drift_jacobian",
    "euler_drift",
    "ke_corr_rate",
    "ke_corr_rate_variant",
    "ke_cov_rate",
    "ke_mean_rate",
    "kinetic_energy",
    "kinetic_energy_invariant",
    "mean_rate",
    "momentum_sq_invariant",
    "moments_from_belief",
    "propagate_moments",
    "rigidbody_sde_model",
]

# index pairs (a_i, b_i) completing each axis i in the gyroscopic products
_PAIRS = ((1, 2), (2, 0), (0, 1))

COV_ROUTE_TOL = 1e-10
MEAN_FORM_TOL = 1e-12


@dataclass(frozen=True)
class InertiaModel:
    """Principal-axis inertia. Only a diagonal J is physical here.

    The gyroscopic coefficients c_i are recomputed from J on every access,
    never cached, so they cannot go stale.
    """

    j_diag: np.ndarray

    def __post_init__(self):
        j = np.asarray(self.j_diag, dtype=float)
        if j.ndim == 2:
            if j.shape != (3, 3) or np.any(j - np.diag(np.diagonal(j))):
                raise ValueError("inertia must be diagonal (principal body axes assumed)")
            j = np.diagonal(j).copy()
        j = as_finite_vector(j, 3, "inertia diagonal")
        if np.any(j <= 0):
            raise ValueError("inertia diagonal must be strictly positive")
        if np.any(j > j.sum() - j):
            warnings.warn(
                "inertia violates the triangle inequality J_i + J_j >= J_k; "
                "not realizable by a rigid mass distribution",
                stacklevel=2,
            )
        j.flags.writeable = False
        object.__setattr__(self, "j_diag", j)

    @property
    def c1(self) -> float:
        j = self.j_diag
        return float((j[1] - j[2]) / j[0])

    @property
    def c2(self) -> float:
        j = self.j_diag
        return float((j[2] - j[0]) / j[1])

    @property
    def c3(self) -> float:
        j = self.j_diag
        return float((j[0] - j[1]) / j[2])

    @property
    def c_vector(self) -> np.ndarray:
        return np.array([self.c1, self.c2, self.c3])

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.j_diag)

    @property
    def inv_diag(self) -> np.ndarray:
        return 1.0 / self.j_diag


@dataclass(frozen=True)
class RigidBodyMoments:
    """Angular-velocity mean/covariance plus kinetic-energy moments.

    The raw second moment R_K is derived (R_K = Σ_K + μ_K²) rather than
    stored, so the variance identity cannot drift apart.
    """

    mu: np.ndarray
    sigma: np.ndarray
    mu_k: float
    sigma_k: float

    def __post_init__(self):
        mu = as_finite_vector(self.mu, 3, "mu")
        sigma = sym_matrix(self.sigma, "sigma")
        if sigma.shape[0] != 3:
            raise ValueError(f"sigma must be 3x3, got {sigma.shape}")
        if np.any(np.diagonal(sigma) < 0):
            raise ValueError("sigma has negative diagonal entries")
        mu.flags.writeable = False
        sigma.flags.writeable = False
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "mu_k", float(self.mu_k))
        object.__setattr__(self, "sigma_k", float(self.sigma_k))

    @property
    def r_k(self) -> float:
        return self.sigma_k + self.mu_k * self.mu_k

    @property
    def belief(self) -> GaussianBelief:
        return GaussianBelief(self.mu, self.sigma)


def moments_from_belief(belief: GaussianBelief, inertia: InertiaModel) -> RigidBodyMoments:
    """Kinetic-energy moments of a Gaussian angular-velocity belief.

    For the quadratic energy U = ωᵀJω/2 of Gaussian ω ~ (μ, Σ):
    E[U] = (μᵀJμ + tr(JΣ))/2 and Var[U] = tr((JΣ)²)/2 + μᵀJΣJμ.
    """
    if belief.dim != 3:
        raise ValueError("rigid-body belief must be 3-dimensional")
    j = inertia.matrix
    mu, sigma = belief.mean, belief.cov
    js = j @ sigma
    mu_k = 0.5 * (mu @ j @ mu + np.trace(js))
    sigma_k = 0.5 * np.trace(js @ js) + mu @ j @ sigma @ j @ mu
    return RigidBodyMoments(mu=mu, sigma=sigma, mu_k=float(mu_k), sigma_k=float(sigma_k))


def euler_drift(omega, inertia: InertiaModel) -> np.ndarray:
    """Torque-free angular acceleration (c1 w2 w3, c2 w3 w1, c3 w1 w2)."""
    w = as_finite_vector(omega, 3, "omega")
    return np.array(
        [
            inertia.c1 * w[1] * w[2],
            inertia.c2 * w[2] * w[0],
            inertia.c3 * w[0] * w[1],
        ]
    )


def drift_jacobian(mu, inertia: InertiaModel) -> np.ndarray:
    """Jacobian A of the gyroscopic drift at mu (not symmetric)."""
    m = as_finite_vector(mu, 3, "mu")
    c1, c2, c3 = inertia.c1, inertia.c2, inertia.c3
    return square_matrix(
        [
            [0.0, c1 * m[2], c1 * m[1]],
            [c2 * m[2], 0.0, c2 * m[0]],
            [c3 * m[1], c3 * m[0], 0.0],
        ],
        3,
        "A",
    )


def kinetic_energy(omega, inertia: InertiaModel) -> float:
    """Rotational kinetic energy ωᵀJω/2."""
    w = as_finite_vector(omega, 3, "omega")
    return float(0.5 * np.sum(inertia.j_diag * w * w))


def kinetic_energy_invariant(inertia: InertiaModel) -> InvariantFn:
    """Kinetic energy with gradient Jω and half-Hessian J/2."""
    j = inertia.j_diag.copy()

    return InvariantFn(
        name="kinetic_energy",
        value=lambda w: float(0.5 * np.sum(j * np.asarray(w, dtype=float) ** 2)),
        grad=lambda w: j * np.asarray(w, dtype=float),
        hess_half=lambda w: np.diag(j / 2.0),
        values=lambda states: 0.5 * np.asarray(states, dtype=float) ** 2 @ j,
    )


def momentum_sq_invariant(inertia: InertiaModel) -> InvariantFn:
    """Squared angular-momentum norm ‖Jω‖², the second conserved quantity."""
    j2 = inertia.j_diag.copy() ** 2

    return InvariantFn(
        name="momentum_sq",
        value=lambda w: float(np.sum(j2 * np.asarray(w, dtype=float) ** 2)),
        grad=lambda w: 2.0 * j2 * np.asarray(w, dtype=float),
        hess_half=lambda w: np.diag(j2),
        values=lambda states: np.asarray(states, dtype=float) ** 2 @ j2,
    )


def _mean_rate_two_ways(mu, sigma, inertia):
    """dμ/dt by the componentwise form and by the cross-product form.

    Componentwise: μ̇_i = c_i Σ_ab + c_i μ_a μ_b over the axis pairs.
    Vector: μ̇ = -J⁻¹(μ × Jμ) + J⁻¹σ with σ_i = (J_a - J_b) Σ_ab.
    """
    c = inertia.c_vector
    component = np.array(
        [c[i] * sigma[a, b] + c[i] * mu[a] * mu[b] for i, (a, b) in enumerate(_PAIRS)]
    )
    j = inertia.j_diag
    sigma_force = np.array([(j[a] - j[b]) * sigma[a, b] for a, b in _PAIRS])
    vector = (-np.cross(mu, j * mu) + sigma_force) / j
    return component, vector


def mean_rate(m: RigidBodyMoments, inertia: InertiaModel) -> np.ndarray:
    """Rate of the angular-velocity mean under Gaussian closure.

    Both algebraic forms are evaluated and must agree; the componentwise
    form is returned.
    """
    component, vector = _mean_rate_two_ways(m.mu, m.sigma, inertia)
    scale = max(1.0, float(np.max(np.abs(component))))
    if np.max(np.abs(component - vector)) > MEAN_FORM_TOL * scale:
        raise NumericalAbortError(
            "mean-rate consistency guard: componentwise and cross-product "
            "forms disagree beyond tolerance"
        )
    return component


def _third_moment_matrix(mu, sigma):
    """M_ij = E[ω_i ω_a ω_b] for the axis pair (a, b) of column j.

    Gaussian closure: E[XYZ] = μxμyμz + μx Σyz + μy Σxz + μz Σxy.
    """
    a = np.array([p[0] for p in _PAIRS])
    b = np.array([p[1] for p in _PAIRS])
    return (
        np.outer(mu, mu[a] * mu[b])
        + np.outer(mu, sigma[a, b])
        + sigma[:, b] * mu[a]
        + sigma[:, a] * mu[b]
    )


def _cov_rate_compact(mu, sigma, inertia, q_diag):
    """Σ̇ = AΣ + ΣAᵀ + J⁻¹QJ⁻¹ with A the drift Jacobian at μ."""
    a = drift_jacobian(mu, inertia)
    inv_j = inertia.inv_diag
    asig = a @ sigma
    return asig + asig.T + np.diag(q_diag * inv_j * inv_j)


def _cov_rate_third_moment(mu, sigma, mu_dot, inertia, q_diag):
    """Σ̇ via the raw-second-moment route.

    Ṙ = Ω₂ + Ω₂ᵀ + J⁻¹QJ⁻¹ where Ω₂_ij = E[ω_i f_j(ω)] closes the third
    moments with the Gaussian formula; then Σ̇ = Ṙ - μ̇μᵀ - μμ̇ᵀ.
    """
    omega2 = _third_moment_matrix(mu, sigma) * inertia.c_vector
    inv_j = inertia.inv_diag
    r_dot = omega2 + omega2.T + np.diag(q_diag * inv_j * inv_j)
    return r_dot - np.outer(mu_dot, mu) - np.outer(mu, mu_dot)


def cov_rate(m: RigidBodyMoments, inertia: InertiaModel, q) -> np.ndarray:
    """Rate of the angular-velocity covariance under Gaussian closure.

    Computed two independent ways (compact Jacobian form and the
    third-moment raw-correlation route) which must agree to 1e-10; the
    compact form is returned, exactly symmetric.
    """
    q_diag = diagonal_entries(q, 3)
    mu, sigma = m.mu, m.sigma
    compact = _cov_rate_compact(mu, sigma, inertia, q_diag)
    mu_dot = mean_rate(m, inertia)
    third = _cov_rate_third_moment(mu, sigma, mu_dot, inertia, q_diag)
    scale = max(1.0, float(np.max(np.abs(compact))))
    if np.max(np.abs(compact - third)) > COV_ROUTE_TOL * scale:
        raise NumericalAbortError(
            "covariance-rate consistency guard: compact and third-moment "
            "routes disagree beyond 1e-10"
        )
    return sym_matrix(compact, "cov rate")


def ke_mean_rate(inertia: InertiaModel, q) -> float:
    """d/dt of mean kinetic energy: tr(J⁻¹Q)/2, state-independent."""
    q_diag = diagonal_entries(q, 3)
    return float(0.5 * np.sum(q_diag * inertia.inv_diag))


def ke_cov_rate(m: RigidBodyMoments, q) -> float:
    """d/dt of the kinetic-energy variance: tr((Σ + μμᵀ)Q) ≥ 0."""
    q_diag = diagonal_entries(q, 3)
    corr = m.sigma + np.outer(m.mu, m.mu)
    return float(np.sum(np.diagonal(corr) * q_diag))


def ke_corr_rate(m: RigidBodyMoments, inertia: InertiaModel, q) -> float:
    """d/dt of the raw second energy moment: μ_K tr(J⁻¹Q) + tr((Σ+μμᵀ)Q).

    This is the form consistent with Ṙ_K = Σ̇_K + 2 μ_K μ̇_K; see
    ke_corr_rate_variant for the alternative first factor kept for the
    discrepancy report.
    """
    q_diag = diagonal_entries(q, 3)
    first = m.mu_k * float(np.sum(q_diag * inertia.inv_diag))
    return first + ke_cov_rate(m, q)


def ke_corr_rate_variant(m: RigidBodyMoments, inertia: InertiaModel, q) -> float:
    """Alternative raw-moment rate with first factor μ_K tr(JQ).

    Kept solely so the verification harness can discriminate the two forms
    against Monte Carlo; the propagation code never uses it.
    """
    q_diag = diagonal_entries(q, 3)
    first = m.mu_k * float(np.sum(q_diag * inertia.j_diag))
    return first + ke_cov_rate(m, q)


def _pack(mu, sigma, mu_k, sigma_k):
    return np.concatenate(
        [
            mu,
            [sigma[0, 0], sigma[0, 1], sigma[0, 2], sigma[1, 1], sigma[1, 2], sigma[2, 2]],
            [mu_k, sigma_k],
        ]
    )


def _unpack(y):
    mu = y[0:3]
    s11, s12, s13, s22, s23, s33 = y[3:9]
    sigma = np.array([[s11, s12, s13], [s12, s22, s23], [s13, s23, s33]])
    return mu, sigma, float(y[9]), float(y[10])


def propagate_moments(
    initial: RigidBodyMoments, inertia: InertiaModel, q, grid
) -> list[RigidBodyMoments]:
    """RK4-integrate the coupled moment ODEs across a uniform grid.

    The covariance is stored in packed upper-triangular form, so it stays
    exactly symmetric by construction. The energy variance Σ_K is
    integrated as its own equation; R_K is reconstructed as Σ_K + μ_K².
    A negative covariance diagonal aborts (closure breakdown).
    """
    q_diag = diagonal_entries(q, 3)

    def field(t, y):
        mu, sigma, mu_k, sigma_k = _unpack(y)
        if np.any(np.diagonal(sigma) < 0):
            raise NumericalAbortError(
                f"covariance diagonal went negative at t = {t:.6g}; "
                "moment model breakdown"
            )
        m = RigidBodyMoments(mu=mu, sigma=sigma, mu_k=mu_k, sigma_k=sigma_k)
        return _pack(
            mean_rate(m, inertia),
            cov_rate(m, inertia, q_diag),
            ke_mean_rate(inertia, q_diag),
            ke_cov_rate(m, q_diag),
        )

    y0 = _pack(initial.mu, initial.sigma, initial.mu_k, initial.sigma_k)
    trajectory = integrate_ode(field, y0, grid)
    out = []
    for row, t in zip(trajectory, np.asarray(grid, dtype=float)):
        mu, sigma, mu_k, sigma_k = _unpack(row)
        try:
            out.append(RigidBodyMoments(mu=mu, sigma=sigma, mu_k=mu_k, sigma_k=sigma_k))
        except ValueError as exc:
            raise NumericalAbortError(
                f"invalid moment state at t = {t:.6g}: {exc}"
            ) from None
    return out


def rigidbody_sde_model(inertia: InertiaModel, q) -> SdeModel:
    """SDE model dω = -J⁻¹(ω × Jω) dt + J⁻¹ dB with diagonal torque noise."""
    q_diag = diagonal_entries(q, 3)
    inv_j = inertia.inv_diag.copy()
    diffusion_matrix = np.diag(inv_j)
    params = np.ascontiguousarray(
        np.concatenate([inv_j, inertia.c_vector]), dtype=np.float64
    )

    def runner(kmod, x0, dw, dt, substeps, out):
        kmod.rigidbody_block(x0, dw, params, dt, substeps, out)
        return {}

    return SdeModel(
        name="rigidbody",
        dim_state=3,
        dim_noise=3,
        drift=lambda t, x: euler_drift(x, inertia),
        diffusion=lambda t, x: diffusion_matrix,
        q=q_diag,
        kernel_runner=runner,
    )
