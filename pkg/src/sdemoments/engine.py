"""Path stepping, ensemble propagation, and ensemble statistics.

The stepping rule is the explicit first-order update

    x(t+dt) = x + f(t,x) dt + g(t,x) dB,    dB ~ N(0, Q dt),

applied per path with an independent, replayable noise stream per path.
Deterministic moment equations are integrated separately with classical RK4.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .backend import kernels as _default_kernels
from .core import (
    GaussianBelief,
    RngStream,
    as_finite_vector,
    diagonal_entries,
    gaussian_belief_sqrt,
    sym_matrix,
)

__all__ = [
    "Ensemble",
    "EnsembleSeries",
    "InvariantFn",
    "MomentEntry",
    "MomentSeries",
    "NumericalAbortError",
    "SdeModel",
    "em_step",
    "ensemble_stats",
    "finite_difference_expectation_rate",
    "finite_difference_rate",
    "integrate_ode",
    "propagate_ensemble",
    "rk4_step",
    "series_stats",
    "uniform_grid",
    "validate_invariant_derivatives",
]

DIVERGENCE_LIMIT = 1e12
MAX_DIVERGENT_FRACTION = 1e-3


class NumericalAbortError(RuntimeError):
    """Raised when a simulation or integration leaves the trustworthy regime."""


@dataclass
class SdeModel:
    """Drift f(t,x), diffusion g(t,x), and diagonal noise covariance Q.

    ``drift`` maps (t, x) to the state rate; ``diffusion`` maps (t, x) to the
    n x m matrix applied to the Brownian increment. ``q`` is the diagonal of
    Q (a full diagonal matrix is accepted and reduced). ``kernel_runner``,
    when set, advances whole path blocks through the selected backend and is
    an optimization only; the generic per-path loop is the reference.
    """

    name: str
    dim_state: int
    dim_noise: int
    drift: Callable[[float, np.ndarray], np.ndarray]
    diffusion: Callable[[float, np.ndarray], np.ndarray]
    q: np.ndarray
    kernel_runner: Callable | None = None

    def __post_init__(self):
        if self.dim_state < 1 or self.dim_noise < 1:
            raise ValueError("state and noise dimensions must be positive")
        self.q = diagonal_entries(self.q, self.dim_noise)

    @property
    def q_matrix(self) -> np.ndarray:
        return np.diag(self.q)


@dataclass
class Ensemble:
    """Sampled states at one time: the Monte Carlo view of the distribution."""

    t: float
    states: np.ndarray
    master_seed: int

    def __post_init__(self):
        s = np.asarray(self.states, dtype=float)
        if s.ndim != 2 or s.shape[0] < 2:
            raise ValueError("states must be (N, n) with N >= 2")
        if not np.all(np.isfinite(s)):
            raise ValueError("ensemble contains non-finite states")
        self.states = s

    @property
    def n_samples(self) -> int:
        return self.states.shape[0]


@dataclass
class EnsembleSeries:
    """Monte Carlo trajectories on a time grid, divergence-flagged.

    ``states`` has shape (N, K, n) in path order; ``divergent`` marks paths
    that left the finite / magnitude-bounded regime anywhere along the way.
    ``aux`` carries per-path extras from the stepping kernel (for the orbital
    model, the minimum squared radius visited at substep resolution).
    """

    times: np.ndarray
    states: np.ndarray
    master_seed: int
    divergent: np.ndarray
    aux: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.states.shape[0]

    @property
    def n_divergent(self) -> int:
        return int(self.divergent.sum())

    def alive_states(self) -> np.ndarray:
        """(N_alive, K, n) view of the paths that stayed in range."""
        if self.n_divergent == 0:
            return self.states
        return self.states[~self.divergent]

    def ensemble_at(self, k: int) -> Ensemble:
        """Non-divergent sample set at grid index k."""
        return Ensemble(
            t=float(self.times[k]),
            states=self.alive_states()[:, k, :].copy(),
            master_seed=self.master_seed,
        )


@dataclass
class InvariantFn:
    """Scalar state functional with optional derivative maps.

    ``grad`` is the exact gradient; ``hess_half`` is HALF the Hessian, the
    form the moment-rate expressions contract against Q. ``values``, when
    given, evaluates the functional over a whole (..., n) array at once.
    """

    name: str
    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray] | None = None
    hess_half: Callable[[np.ndarray], np.ndarray] | None = None
    values: Callable[[np.ndarray], np.ndarray] | None = None

    def sample_values(self, states: np.ndarray) -> np.ndarray:
        """Evaluate over an array of states with shape (..., n)."""
        x = np.asarray(states, dtype=float)
        if self.values is not None:
            return np.asarray(self.values(x), dtype=float)
        flat = x.reshape(-1, x.shape[-1])
        out = np.array([self.value(row) for row in flat])
        return out.reshape(x.shape[:-1])


@dataclass
class MomentEntry:
    """Ensemble statistics at a single time."""

    t: float
    mean: np.ndarray
    cov: np.ndarray
    se_mean: np.ndarray
    u_mean: float | None = None
    u_raw2: float | None = None
    u_var: float | None = None
    se_u_mean: float | None = None


@dataclass
class MomentSeries:
    """First two moments on a time grid, plus invariant statistics.

    ``mean`` is (K, n); ``cov`` is (K, n, n); the ``u_*`` arrays are (K,)
    when an invariant was supplied, else None. Standard errors are
    sample-std / sqrt(N); the 3-sigma band methods use the population
    spread (sample std), which is what grows with the ensemble.
    """

    times: np.ndarray
    n_samples: int
    mean: np.ndarray
    cov: np.ndarray
    se_mean: np.ndarray
    u_mean: np.ndarray | None = None
    u_raw2: np.ndarray | None = None
    u_var: np.ndarray | None = None
    se_u_mean: np.ndarray | None = None

    def u_band3(self) -> tuple[np.ndarray, np.ndarray]:
        if self.u_mean is None:
            raise ValueError("series carries no invariant statistics")
        half = 3.0 * np.sqrt(self.u_var)
        return self.u_mean - half, self.u_mean + half

    def mean_band3(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        half = 3.0 * np.sqrt(self.cov[:, i, i])
        return self.mean[:, i] - half, self.mean[:, i] + half


def uniform_grid(t_final: float, dt: float, t0: float = 0.0) -> np.ndarray:
    """Uniform time grid from t0 to t_final inclusive, spacing dt."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    span = t_final - t0
    n_steps = int(round(span / dt))
    if n_steps < 1 or abs(n_steps * dt - span) > 1e-9 * max(abs(span), dt):
        raise ValueError(f"t_final - t0 = {span} is not a positive multiple of dt = {dt}")
    return np.linspace(t0, t_final, n_steps + 1)


def _check_uniform(times) -> float:
    t = as_finite_vector(times, name="time grid")
    if t.size < 2:
        raise ValueError("time grid needs at least 2 points")
    steps = np.diff(t)
    h = float(steps[0])
    if h <= 0 or np.any(np.abs(steps - h) > 1e-9 * abs(h)):
        raise ValueError("time grid must be uniform and strictly increasing")
    return h


def em_step(model: SdeModel, t: float, x: np.ndarray, dt: float, dB: np.ndarray) -> np.ndarray:
    """One first-order stochastic step: x + f(t,x) dt + g(t,x) dB."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    xv = as_finite_vector(x, model.dim_state, "x")
    db = as_finite_vector(dB, model.dim_noise, "dB")
    return xv + np.asarray(model.drift(t, xv), dtype=float) * dt + np.asarray(
        model.diffusion(t, xv), dtype=float
    ) @ db


def _generic_block(model: SdeModel, x0, dw, t0, dt, substeps, out):
    """Reference per-path stepping loop for models without a kernel."""
    n_paths, n_out = out.shape[0], out.shape[1]
    for j in range(n_paths):
        x = x0[j].copy()
        out[j, 0] = x
        i = 0
        for k in range(1, n_out):
            for _ in range(substeps):
                t = t0 + i * dt
                f = np.asarray(model.drift(t, x), dtype=float)
                g = np.asarray(model.diffusion(t, x), dtype=float)
                x = x + f * dt + g @ dw[j, i]
                i += 1
            out[j, k] = x
    return {}


def propagate_ensemble(
    model: SdeModel,
    initial_belief: GaussianBelief,
    grid,
    n_samples: int,
    master_seed: int,
    *,
    substeps: int = 1,
    workers: int = 1,
    block_size: int = 256,
    kernels=None,
) -> EnsembleSeries:
    """Advance N sampled paths across the grid; deterministic in the seed.

    Each path owns stream ``(master_seed, path_index)`` and consumes it in a
    fixed order (initial draw, then one increment per substep), so results
    are bit-identical for any ``workers`` or ``block_size``. ``substeps``
    refines the integration step below the output grid spacing. Paths whose
    state leaves the finite range are flagged divergent; the run aborts if
    more than 0.1% diverge.
    """
    times = np.asarray(grid, dtype=float)
    dt_grid = _check_uniform(times)
    if initial_belief.dim != model.dim_state:
        raise ValueError(
            f"initial belief dim {initial_belief.dim} != model state dim {model.dim_state}"
        )
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    if substeps < 1:
        raise ValueError("substeps must be at least 1")
    if workers < 1:
        raise ValueError("workers must be at least 1")

    kmod = _default_kernels if kernels is None else kernels
    n_out = times.size
    n_sub = (n_out - 1) * substeps
    dt = dt_grid / substeps
    t0 = float(times[0])
    scale = np.sqrt(model.q * dt)
    sqrt_cov = gaussian_belief_sqrt(initial_belief)
    mean0 = initial_belief.mean

    states = np.empty((n_samples, n_out, model.dim_state))
    aux: dict[str, np.ndarray] = {}

    def run_block(lo, hi):
        n_blk = hi - lo
        x0 = np.empty((n_blk, model.dim_state))
        dw = np.empty((n_blk, n_sub, model.dim_noise))
        for j in range(n_blk):
            gen = RngStream(master_seed, lo + j).generator
            x0[j] = mean0 + sqrt_cov @ gen.standard_normal(model.dim_state)
            dw[j] = scale * gen.standard_normal((n_sub, model.dim_noise))
        out = states[lo:hi]
        if model.kernel_runner is not None:
            return lo, model.kernel_runner(kmod, x0, dw, dt, substeps, out)
        return lo, _generic_block(model, x0, dw, t0, dt, substeps, out)

    blocks = [(lo, min(lo + block_size, n_samples)) for lo in range(0, n_samples, block_size)]
    if workers == 1:
        results = [run_block(lo, hi) for lo, hi in blocks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda b: run_block(*b), blocks))

    for lo, extra in results:
        for key, arr in extra.items():
            aux.setdefault(key, np.empty(n_samples))[lo : lo + arr.shape[0]] = arr

    divergent = ~np.all(np.abs(states) <= DIVERGENCE_LIMIT, axis=(1, 2))
    n_div = int(divergent.sum())
    if n_div > MAX_DIVERGENT_FRACTION * n_samples:
        raise NumericalAbortError(
            f"{n_div} of {n_samples} paths diverged "
            f"(limit {MAX_DIVERGENT_FRACTION:.1%}); model or step size unsound"
        )

    return EnsembleSeries(
        times=times,
        states=states,
        master_seed=int(master_seed),
        divergent=divergent,
        aux=aux,
    )


def _stats_arrays(samples: np.ndarray):
    """Mean, covariance (1/(N-1)), and SE of the mean, fixed reduction order."""
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    centered = samples - mean
    cov = sym_matrix(centered.T @ centered / (n - 1))
    se_mean = np.sqrt(np.diagonal(cov) / n)
    return mean, cov, se_mean


def ensemble_stats(ens: Ensemble, invariant: InvariantFn | None = None) -> MomentEntry:
    """Sample mean, covariance, invariant moments, and standard errors."""
    mean, cov, se_mean = _stats_arrays(ens.states)
    entry = MomentEntry(t=ens.t, mean=mean, cov=cov, se_mean=se_mean)
    if invariant is not None:
        n = ens.n_samples
        u = invariant.sample_values(ens.states)
        u_mean = float(u.mean())
        u_raw2 = float((u * u).mean())
        u_var = float(u.var(ddof=1))
        entry.u_mean = u_mean
        entry.u_raw2 = u_raw2
        entry.u_var = u_var
        entry.se_u_mean = float(np.sqrt(u_var / n))
    return entry


def series_stats(series: EnsembleSeries, invariant: InvariantFn | None = None) -> MomentSeries:
    """Per-time ensemble statistics for a whole trajectory array.

    Divergent paths are excluded. Covariances are accumulated in fixed path
    order, so the output is deterministic for a given trajectory array.
    """
    x = series.alive_states()
    n, n_out, dim = x.shape
    if n < 2:
        raise ValueError("fewer than 2 non-divergent paths; nothing to estimate")
    mean = x.mean(axis=0)
    cov = np.empty((n_out, dim, dim))
    chunk = 64
    for k0 in range(0, n_out, chunk):
        k1 = min(k0 + chunk, n_out)
        centered = x[:, k0:k1, :] - mean[k0:k1]
        cov[k0:k1] = np.einsum("nki,nkj->kij", centered, centered) / (n - 1)
    cov = (cov + cov.transpose(0, 2, 1)) / 2.0
    se_mean = np.sqrt(np.diagonal(cov, axis1=1, axis2=2) / n)

    out = MomentSeries(
        times=series.times.copy(),
        n_samples=n,
        mean=mean,
        cov=cov,
        se_mean=se_mean,
    )
    if invariant is not None:
        u = invariant.sample_values(x)
        out.u_mean = u.mean(axis=0)
        out.u_raw2 = (u * u).mean(axis=0)
        out.u_var = u.var(axis=0, ddof=1)
        out.se_u_mean = np.sqrt(out.u_var / n)
    return out


def rk4_step(field_fn: Callable, t: float, y: np.ndarray, dt: float) -> np.ndarray:
    """Classical 4th-order Runge-Kutta update for dy/dt = field_fn(t, y)."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    y = np.asarray(y, dtype=float)
    k1 = np.asarray(field_fn(t, y), dtype=float)
    k2 = np.asarray(field_fn(t + dt / 2.0, y + (dt / 2.0) * k1), dtype=float)
    k3 = np.asarray(field_fn(t + dt / 2.0, y + (dt / 2.0) * k2), dtype=float)
    k4 = np.asarray(field_fn(t + dt, y + dt * k3), dtype=float)
    out = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NumericalAbortError(f"non-finite RK4 state at t = {t + dt}")
    return out


def integrate_ode(field_fn: Callable, y0, grid) -> np.ndarray:
    """RK4-integrate across a uniform grid; returns (K, len(y0)) states."""
    times = np.asarray(grid, dtype=float)
    dt = _check_uniform(times)
    y = np.asarray(y0, dtype=float).copy()
    out = np.empty((times.size, y.size))
    out[0] = y
    for k in range(1, times.size):
        y = rk4_step(field_fn, float(times[k - 1]), y, dt)
        out[k] = y
    return out


def finite_difference_rate(times, values) -> np.ndarray:
    """d/dt estimate on a uniform grid: central interior, one-sided ends.

    The end stencils are second order ((-3y0 + 4y1 - y2) / 2h and its
    mirror), so the whole estimate is exact on quadratics.
    """
    h = _check_uniform(times)
    y = np.asarray(values, dtype=float)
    if y.shape[0] != np.asarray(times).shape[0]:
        raise ValueError("values length does not match time grid")
    if y.shape[0] < 3:
        raise ValueError("need at least 3 grid points for rate estimates")
    d = np.empty_like(y)
    d[1:-1] = (y[2:] - y[:-2]) / (2.0 * h)
    d[0] = (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * h)
    d[-1] = (3.0 * y[-1] - 4.0 * y[-2] + y[-3]) / (2.0 * h)
    return d


def finite_difference_expectation_rate(series: MomentSeries, quantity: str) -> np.ndarray:
    """Finite-difference d/dt of one statistic in a MomentSeries.

    ``quantity`` names a series field: "u_mean", "u_raw2", "u_var", "mean",
    or "cov". Vector/matrix statistics are differenced componentwise.
    """
    if not hasattr(series, quantity):
        raise ValueError(f"unknown quantity {quantity!r}")
    values = getattr(series, quantity)
    if values is None:
        raise ValueError(f"series carries no {quantity!r} data")
    return finite_difference_rate(series.times, values)


def validate_invariant_derivatives(
    invariant: InvariantFn,
    x,
    *,
    eps: float = 1e-6,
    rtol: float = 1e-6,
) -> None:
    """Check grad and hess_half against central differences of the value.

    The Hessian comparison accounts for hess_half being half the true
    Hessian. Raises ValueError when either check exceeds ``rtol`` relative
    to the larger of the analytic scale and 1.
    """
    xv = as_finite_vector(x, name="x")
    n = xv.size

    def fd_partial(fn, i):
        e = np.zeros(n)
        e[i] = eps
        hi = np.asarray(fn(xv + e), dtype=float)
        lo = np.asarray(fn(xv - e), dtype=float)
        return (hi - lo) / (2.0 * eps)

    if invariant.grad is not None:
        g = np.asarray(invariant.grad(xv), dtype=float)
        g_fd = np.array([fd_partial(invariant.value, i) for i in range(n)])
        scale = max(1.0, float(np.max(np.abs(g))))
        err = float(np.max(np.abs(g - g_fd)))
        if err > rtol * scale:
            raise ValueError(
                f"{invariant.name}: gradient mismatch {err:.3e} vs finite differences"
            )
    if invariant.hess_half is not None:
        if invariant.grad is None:
            raise ValueError("hess_half supplied without grad; cannot cross-check")
        h2 = 2.0 * np.asarray(invariant.hess_half(xv), dtype=float)
        h_fd = np.column_stack([fd_partial(invariant.grad, i) for i in range(n)])
        scale = max(1.0, float(np.max(np.abs(h2))))
        err = float(np.max(np.abs(h2 - h_fd)))
        if err > rtol * scale:
            raise ValueError(
                f"{invariant.name}: Hessian mismatch {err:.3e} vs finite differences"
            )
