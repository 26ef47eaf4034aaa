"""Small dense linear algebra, Gaussian moment identities, and noise sampling.

Everything downstream (path stepping, moment ODEs, bound evaluation) leans on
the helpers here: exactly-symmetric matrix construction, diagonal noise
covariances, counter-based random streams, and closed-form Gaussian moments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GaussianBelief",
    "RngStream",
    "as_finite_vector",
    "corr_from_cov",
    "cov_from_corr",
    "diagonal_entries",
    "expect_quadratic_form",
    "gaussian_belief_sqrt",
    "gaussian_third_moment",
    "sample_brownian_increment",
    "square_matrix",
    "sym_eig_bounds",
    "sym_matrix",
]

_MAX_SEED = 2**64


def as_finite_vector(x, dim=None, name="vector") -> np.ndarray:
    """Return ``x`` as a finite float64 1-D array, validating length if given."""
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"{name} must have length {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def square_matrix(m, dim=None, name="matrix") -> np.ndarray:
    """Validate a general (not necessarily symmetric) square float matrix."""
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if dim is not None and a.shape[0] != dim:
        raise ValueError(f"{name} must be {dim}x{dim}, got {a.shape[0]}x{a.shape[1]}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def sym_matrix(m, name="matrix") -> np.ndarray:
    """Validate a square near-symmetric matrix and return it exactly symmetric.

    The result satisfies ``M == M.T`` bitwise: averaging with the transpose is
    commutative entrywise, so no tolerance is left behind.
    """
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > 1e-9 * scale:
        raise ValueError(f"{name} is not symmetric")
    return (a + a.T) / 2.0


def diagonal_entries(q, dim=None, name="Q") -> np.ndarray:
    """Diagonal of a noise covariance given as a 1-D diagonal or full matrix.

    Off-diagonal structure is rejected: the noise components are modelled as
    independent, so only diagonal covariances may reach the sampler.
    """
    a = np.asarray(q, dtype=float)
    if a.ndim == 1:
        d = as_finite_vector(a, dim, name)
    elif a.ndim == 2:
        if a.shape[0] != a.shape[1]:
            raise ValueError(f"{name} must be square, got shape {a.shape}")
        if np.any(a - np.diag(np.diagonal(a))):
            raise ValueError(f"{name} must be diagonal (independent noise components)")
        d = as_finite_vector(np.diagonal(a).copy(), dim, name)
    else:
        raise ValueError(f"{name} must be a vector of diagonal entries or a square matrix")
    if np.any(d < 0):
        raise ValueError(f"{name} has negative diagonal entries")
    return d


@dataclass(frozen=True)
class GaussianBelief:
    """Mean vector and symmetric covariance of a state at one time instant."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = as_finite_vector(self.mean, name="mean")
        cov = sym_matrix(self.cov, name="cov")
        if cov.shape[0] != mean.shape[0]:
            raise ValueError(
                f"mean has length {mean.shape[0]} but cov is {cov.shape[0]}x{cov.shape[1]}"
            )
        if np.any(np.diagonal(cov) < 0):
            raise ValueError("cov has negative diagonal entries")
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def gaussian_belief_sqrt(belief: GaussianBelief) -> np.ndarray:
    """Symmetric square root of the belief covariance (handles singular covs)."""
    w, v = np.linalg.eigh(belief.cov)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


class RngStream:
    """One reproducible random stream out of a counter-based family.

    Identical ``(master_seed, stream_index)`` pairs replay the identical
    sample sequence on any machine and under any worker scheduling, because
    the underlying generator is keyed, not jumped. A stream is owned by one
    consumer at a time; draws advance its internal state.
    """

    def __init__(self, master_seed: int, stream_index: int = 0):
        if not 0 <= int(master_seed) < _MAX_SEED:
            raise ValueError("master_seed must fit in 64 bits")
        if int(stream_index) < 0:
            raise ValueError("stream_index must be nonnegative")
        self.master_seed = int(master_seed)
        self.stream_index = int(stream_index)
        self._gen = None

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            key = np.array([self.master_seed, self.stream_index], dtype=np.uint64)
            self._gen = np.random.Generator(np.random.Philox(key=key))
        return self._gen

    def substream(self, index: int) -> "RngStream":
        return RngStream(self.master_seed, index)

    def __repr__(self):
        return f"RngStream(master_seed={self.master_seed}, stream_index={self.stream_index})"


def sample_brownian_increment(q, dt: float, rng: RngStream) -> np.ndarray:
    """Draw one Brownian increment over a step of length ``dt``.

    The increment is zero-mean Gaussian with covariance ``Q*dt``; components
    are independent because Q is restricted to diagonal form.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    d = diagonal_entries(q)
    z = rng.generator.standard_normal(d.shape[0])
    return np.sqrt(d * dt) * z


def corr_from_cov(belief: GaussianBelief) -> np.ndarray:
    """Second raw moment E[X X^T] = cov + mean mean^T."""
    return sym_matrix(belief.cov + np.outer(belief.mean, belief.mean))


def cov_from_corr(corr, mean) -> np.ndarray:
    """Inverse of :func:`corr_from_cov`: cov = E[X X^T] - mean mean^T."""
    m = as_finite_vector(mean, name="mean")
    return sym_matrix(np.asarray(corr, dtype=float) - np.outer(m, m))


def expect_quadratic_form(m, corr) -> float:
    """E[G^T M G] = tr(M E[G G^T]) for any square M and raw second moment."""
    a = np.asarray(m, dtype=float)
    c = np.asarray(corr, dtype=float)
    if a.shape != c.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"dimension mismatch: M is {a.shape}, corr is {c.shape}")
    return float(np.trace(a @ c))


def gaussian_third_moment(i: int, j: int, k: int, belief: GaussianBelief) -> float:
    """Third raw moment E[X_i X_j X_k] of a Gaussian (0-based indices).

    E[X_i X_j X_k] = mu_i mu_j mu_k + mu_i S_jk + mu_j S_ik + mu_k S_ij,
    valid for repeated indices as well, e.g. E[X_1^2 X_3] = mu_1^2 mu_3
    + 2 mu_1 S_13 + mu_3 S_11.
    """
    n = belief.dim
    for idx in (i, j, k):
        if not 0 <= idx < n:
            raise IndexError(f"index {idx} out of range for dimension {n}")
    mu, s = belief.mean, belief.cov
    return float(
        mu[i] * mu[j] * mu[k] + mu[i] * s[j, k] + mu[j] * s[i, k] + mu[k] * s[i, j]
    )


def sym_eig_bounds(q) -> tuple[float, float]:
    """Extreme eigenvalues (lambda_min, lambda_max) of a symmetric matrix.

    Ties are legal: a multiple of the identity returns equal bounds.
    """
    a = sym_matrix(q, name="Q")
    w = np.linalg.eigvalsh(a)
    return float(w[0]), float(w[-1])
