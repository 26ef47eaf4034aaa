"""Perturbed two-body motion and its squared-angular-momentum statistics.

State is (r, rdot) with inverse-square gravitational attraction and white
noise entering the velocity. The tracked invariant is h = ‖r × rdot‖²,
written in dot-product form. The mean and raw-second-moment rates of h have
exact trace expressions and eigenvalue bounds; both are provided, and the
rate expressions are each evaluated by two algebraic routes as a guard.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import as_finite_vector, sym_eig_bounds, sym_matrix
from .engine import Ensemble, InvariantFn, NumericalAbortError, SdeModel

__all__ = [
    "GravModel",
    "TwoBodyState",
    "R_h_rate_bounds",
    "R_h_rate_exact",
    "circular_orbit_state",
    "h_invariant",
    "h_r_sq_values",
    "h_values",
    "mu_h_rate_bounds",
    "mu_h_rate_exact",
    "norm_r_sq_values",
    "squared_momentum_invariant",
    "twobody_drift",
    "twobody_sde_model",
    "v_vector",
    "v_values",
]

LAGRANGE_TOL = 1e-12
RAW_FORM_TOL = 1e-9


@dataclass(frozen=True)
class TwoBodyState:
    """Relative position r (m) and velocity rdot (m/s)."""

    r: np.ndarray
    rdot: np.ndarray

    def __post_init__(self):
        r = as_finite_vector(self.r, 3, "r")
        rdot = as_finite_vector(self.rdot, 3, "rdot")
        r.flags.writeable = False
        rdot.flags.writeable = False
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "rdot", rdot)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.r, self.rdot])

    @classmethod
    def from_vector(cls, x) -> "TwoBodyState":
        v = as_finite_vector(x, 6, "state")
        return cls(r=v[:3], rdot=v[3:])


@dataclass(frozen=True)
class GravModel:
    """Gravitational parameter, perturbation covariance, exclusion radius.

    Q may be any symmetric PSD 3x3 here: the rate formulas and bounds only
    use traces, quadratic forms, and eigenvalues. The noise sampler itself
    (twobody_sde_model) additionally requires Q diagonal.
    """

    mu_grav: float
    q: np.ndarray
    r_min: float = 0.0

    def __post_init__(self):
        mu = float(self.mu_grav)
        if not mu > 0:
            raise ValueError(f"mu_grav must be positive, got {mu}")
        qm = np.asarray(self.q, dtype=float)
        if qm.ndim == 1:
            qm = np.diag(as_finite_vector(qm, 3, "Q"))
        qm = sym_matrix(qm, "Q")
        if qm.shape[0] != 3:
            raise ValueError(f"Q must be 3x3, got {qm.shape}")
        lo, _ = sym_eig_bounds(qm)
        if lo < -1e-12 * max(1.0, float(np.max(np.abs(qm)))):
            raise ValueError("Q must be positive semidefinite")
        rm = float(self.r_min)
        if rm < 0:
            raise ValueError("r_min must be nonnegative")
        qm.flags.writeable = False
        object.__setattr__(self, "mu_grav", mu)
        object.__setattr__(self, "q", qm)
        object.__setattr__(self, "r_min", rm)


def circular_orbit_state(radius: float, mu_grav: float) -> TwoBodyState:
    """In-plane circular orbit at the given radius, for scenarios and tests."""
    if not (radius > 0 and mu_grav > 0):
        raise ValueError("radius and mu_grav must be positive")
    return TwoBodyState(
        r=np.array([radius, 0.0, 0.0]),
        rdot=np.array([0.0, np.sqrt(mu_grav / radius), 0.0]),
    )


def twobody_drift(s: TwoBodyState, g: GravModel) -> np.ndarray:
    """(rdot, -mu r/‖r‖³); noise maps into velocity via the constant [0; I]."""
    nr = float(np.linalg.norm(s.r))
    if nr < g.r_min:
        raise NumericalAbortError(
            f"radius {nr:.6g} fell below the exclusion radius {g.r_min:.6g}"
        )
    return np.concatenate([s.rdot, -g.mu_grav / nr**3 * s.r])


def h_invariant(s: TwoBodyState) -> float:
    """Squared angular-momentum norm via the dot-product form.

    h = ‖r‖²‖rdot‖² - (r·rdot)², cross-checked against ‖r × rdot‖²
    (Lagrange identity) on every call.
    """
    nr2 = float(s.r @ s.r)
    nv2 = float(s.rdot @ s.rdot)
    dot = float(s.r @ s.rdot)
    h = nr2 * nv2 - dot * dot
    cross = np.cross(s.r, s.rdot)
    h_cross = float(cross @ cross)
    if abs(h - h_cross) > LAGRANGE_TOL * max(1.0, nr2 * nv2):
        raise NumericalAbortError(
            "Lagrange-identity guard: dot-product and cross-product forms "
            "of h disagree beyond tolerance"
        )
    return h


def v_vector(s: TwoBodyState) -> np.ndarray:
    """v = ‖r‖² rdot - (r·rdot) r; the part of rdot orthogonal to r, scaled."""
    nr2 = float(s.r @ s.r)
    dot = float(s.r @ s.rdot)
    return nr2 * s.rdot - dot * s.r


def h_values(states) -> np.ndarray:
    """h over an array of 6-dim states, shape (...,)."""
    x = np.asarray(states, dtype=float)
    r, v = x[..., :3], x[..., 3:]
    nr2 = np.sum(r * r, axis=-1)
    nv2 = np.sum(v * v, axis=-1)
    dot = np.sum(r * v, axis=-1)
    return nr2 * nv2 - dot * dot


def v_values(states) -> np.ndarray:
    """v over an array of 6-dim states, shape (..., 3)."""
    x = np.asarray(states, dtype=float)
    r, v = x[..., :3], x[..., 3:]
    nr2 = np.sum(r * r, axis=-1, keepdims=True)
    dot = np.sum(r * v, axis=-1, keepdims=True)
    return nr2 * v - dot * r


def norm_r_sq_values(states) -> np.ndarray:
    x = np.asarray(states, dtype=float)
    r = x[..., :3]
    return np.sum(r * r, axis=-1)


def h_r_sq_values(states) -> np.ndarray:
    """h·‖r‖², which equals ‖v‖²; the quantity appearing in the bounds."""
    return h_values(states) * norm_r_sq_values(states)


def squared_momentum_invariant() -> InvariantFn:
    """h with its 6-gradient and half-Hessian in (r, rdot) blocks."""

    def value(x):
        return float(h_values(np.asarray(x, dtype=float)))

    def grad(x):
        xv = np.asarray(x, dtype=float)
        r, v = xv[:3], xv[3:]
        nr2, nv2, dot = r @ r, v @ v, r @ v
        return np.concatenate([2.0 * nv2 * r - 2.0 * dot * v, 2.0 * nr2 * v - 2.0 * dot * r])

    def hess_half(x):
        xv = np.asarray(x, dtype=float)
        r, v = xv[:3], xv[3:]
        nr2, nv2, dot = r @ r, v @ v, r @ v
        eye = np.eye(3)
        rr_block = nv2 * eye - np.outer(v, v)
        vv_block = nr2 * eye - np.outer(r, r)
        rv_block = 2.0 * np.outer(r, v) - np.outer(v, r) - dot * eye
        top = np.hstack([rr_block, rv_block])
        bottom = np.hstack([rv_block.T, vv_block])
        return np.vstack([top, bottom])

    return InvariantFn(
        name="squared_momentum",
        value=value,
        grad=grad,
        hess_half=hess_half,
        values=h_values,
    )


def mu_h_rate_exact(second_moments_of_r, q) -> float:
    """dE[h]/dt from the position correlation: tr(E[rrᵀ]) tr(Q) - tr(Q E[rrᵀ])."""
    corr = sym_matrix(second_moments_of_r, "E[rr^T]")
    if corr.shape[0] != 3:
        raise ValueError(f"E[rr^T] must be 3x3, got {corr.shape}")
    lo, _ = sym_eig_bounds(corr)
    if lo < -1e-10 * max(1.0, float(np.max(np.abs(corr)))):
        raise ValueError("E[rr^T] must be positive semidefinite")
    qm = sym_matrix(q, "Q")
    return float(np.trace(corr) * np.trace(qm) - np.trace(qm @ corr))


def mu_h_rate_bounds(e_norm_r_sq: float, q) -> tuple[float, float]:
    """Eigenvalue envelope for dE[h]/dt given only E[‖r‖²]."""
    e = float(e_norm_r_sq)
    if e < 0:
        raise ValueError("E[‖r‖²] must be nonnegative")
    qm = sym_matrix(q, "Q")
    lam_min, lam_max = sym_eig_bounds(qm)
    tr = float(np.trace(qm))
    return e * (tr - lam_max), e * (tr - lam_min)


def _r_sq_rate_integrands(states, qm) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample dE[h²]/dt integrand, by two algebraic routes.

    Returns (v_form, raw_form) over states shaped (..., 6): the v-substituted
    form 2(tr(Q)‖v‖² - (rᵀQr/‖r‖²)‖v‖² + 2vᵀQv) and the fully expanded raw
    polynomial in (r, rdot).
    """
    x = np.asarray(states, dtype=float)
    r, rd = x[..., :3], x[..., 3:]
    nr2 = np.sum(r * r, axis=-1)
    tr_q = float(np.trace(qm))
    v = v_values(x)
    nv2 = np.sum(v * v, axis=-1)
    r_qr = np.sum(r * (r @ qm), axis=-1)
    v_qv = np.sum(v * (v @ qm), axis=-1)
    v_form = 2.0 * (tr_q * nv2 - r_qr / nr2 * nv2 + 2.0 * v_qv)

    nv2_dot = np.sum(rd * rd, axis=-1)
    dot = np.sum(r * rd, axis=-1)
    h = nr2 * nv2_dot - dot * dot
    rd_qrd = np.sum(rd * (rd @ qm), axis=-1)
    rd_qr = np.sum(rd * (r @ qm), axis=-1)
    raw_form = (
        2.0 * (nr2 * tr_q - r_qr) * h
        + 4.0 * nr2 * nr2 * rd_qrd
        + 4.0 * dot * dot * r_qr
        - 8.0 * nr2 * dot * rd_qr
    )
    return v_form, raw_form


def _check_rate_forms(val, raw, axes_note="") -> None:
    v = np.atleast_1d(np.asarray(val, dtype=float))
    w = np.atleast_1d(np.asarray(raw, dtype=float))
    scale = np.maximum(1.0, np.maximum(np.abs(v), np.abs(w)))
    if np.any(np.abs(v - w) > RAW_FORM_TOL * scale):
        raise NumericalAbortError(
            "raw-moment rate guard: v-substituted and expanded forms "
            f"disagree beyond 1e-9{axes_note}"
        )


def R_h_rate_exact(ens: Ensemble, q, r_min: float = 0.0) -> float:
    """dE[h²]/dt as an ensemble average.

    Evaluates the v-form integrand and the fully expanded raw form, and
    requires the two averages to agree to 1e-9 relative; the v-form value
    is returned.
    """
    x = np.asarray(ens.states, dtype=float)
    if x.ndim != 2 or x.shape[1] != 6:
        raise ValueError("ensemble states must be (N, 6)")
    qm = sym_matrix(q, "Q")
    nr2 = norm_r_sq_values(x)
    if np.any(nr2 < r_min * r_min):
        raise NumericalAbortError(
            "ensemble contains samples inside the exclusion radius"
        )
    v_form, raw_form = _r_sq_rate_integrands(x, qm)
    val = float(v_form.mean())
    raw = float(raw_form.mean())
    _check_rate_forms(val, raw)
    return val


def R_h_rate_bounds(e_h_r_sq: float, q) -> tuple[float, float]:
    """Eigenvalue envelope for dE[h²]/dt given only E[h‖r‖²] = E[‖v‖²]."""
    e = float(e_h_r_sq)
    if e < 0:
        raise ValueError("E[h‖r‖²] must be nonnegative")
    qm = sym_matrix(q, "Q")
    lam_min, lam_max = sym_eig_bounds(qm)
    tr = float(np.trace(qm))
    return 2.0 * (tr + 2.0 * lam_min - lam_max) * e, 2.0 * (tr + 2.0 * lam_max - lam_min) * e


def twobody_sde_model(g: GravModel) -> SdeModel:
    """SDE model d(r, rdot) = (rdot, -mu r/‖r‖³) dt + [0; I] dB.

    Sampling requires diagonal Q (independent noise components); a general
    symmetric Q is only legal in the bound/rate formulas.
    """
    q_diag = np.diagonal(g.q).copy()
    if np.any(g.q - np.diag(q_diag)):
        raise ValueError(
            "noise sampling requires diagonal Q (independent components); "
            "general symmetric Q is only supported in the bound formulas"
        )
    diffusion_matrix = np.vstack([np.zeros((3, 3)), np.eye(3)])
    params = np.ascontiguousarray([g.mu_grav], dtype=np.float64)

    def drift(t, x):
        xv = np.asarray(x, dtype=float)
        state = TwoBodyState(r=xv[:3], rdot=xv[3:])
        return twobody_drift(state, g)

    def runner(kmod, x0, dw, dt, substeps, out):
        min_r2 = np.empty(x0.shape[0])
        kmod.twobody_block(x0, dw, params, dt, substeps, out, min_r2)
        return {"min_r2": min_r2}

    return SdeModel(
        name="twobody",
        dim_state=6,
        dim_noise=3,
        drift=drift,
        diffusion=lambda t, x: diffusion_matrix,
        q=q_diag,
        kernel_runner=runner,
    )
