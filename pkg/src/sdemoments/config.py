"""Scenario configuration: JSON parsing, validation, bundled defaults.

A scenario file is a flat JSON object. Common keys:

    kind          "rigidbody" or "twobody"
    q_diag        3 diagonal entries of the noise covariance
    initial_mean  state mean (3 numbers for rigidbody, 6 for twobody)
    initial_cov   scalar (multiple of I), diagonal vector, or full matrix
    dt            output grid step, s
    t_final       end time, s
    n_samples     Monte Carlo paths (>= 2)
    master_seed   optional, default 0
    substeps      optional integration refinement per grid step, default 1
    out_dir       optional output directory

Rigid-body scenarios add ``inertia_diag`` (3 positive numbers); two-body
scenarios add ``mu_grav`` and optionally ``r_min`` (default: 1e-3 times the
initial mean radius).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .core import GaussianBelief, as_finite_vector
from .engine import uniform_grid
from .rigidbody import InertiaModel
from .twobody import GravModel

__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "bundled_names",
    "load_bundled",
    "load_config",
    "parse_config",
]

KINDS = ("rigidbody", "twobody")


class ConfigError(ValueError):
    """Invalid or incomplete scenario configuration."""


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str
    q_diag: np.ndarray
    initial: GaussianBelief
    dt: float
    t_final: float
    n_samples: int
    master_seed: int = 0
    substeps: int = 1
    out_dir: str | None = None
    inertia_diag: np.ndarray | None = None
    mu_grav: float | None = None
    r_min: float | None = None

    @property
    def state_dim(self) -> int:
        return 3 if self.kind == "rigidbody" else 6

    def grid(self) -> np.ndarray:
        return uniform_grid(self.t_final, self.dt)

    @property
    def inertia(self) -> InertiaModel:
        if self.inertia_diag is None:
            raise ConfigError("not a rigidbody scenario: no inertia present")
        return InertiaModel(self.inertia_diag)

    @property
    def grav(self) -> GravModel:
        if self.mu_grav is None:
            raise ConfigError("not a twobody scenario: no mu_grav present")
        return GravModel(mu_grav=self.mu_grav, q=np.diag(self.q_diag), r_min=self.r_min)

    def override(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)


def _require(data: dict, key: str):
    if key not in data:
        raise ConfigError(f"missing required key '{key}'")
    return data[key]


def _positive_float(data: dict, key: str) -> float:
    try:
        v = float(_require(data, key))
    except (TypeError, ValueError):
        raise ConfigError(f"key '{key}' must be a number") from None
    if not v > 0 or not np.isfinite(v):
        raise ConfigError(f"key '{key}' must be positive and finite, got {v}")
    return v


def _int_at_least(data: dict, key: str, minimum: int, default=None) -> int:
    raw = data.get(key, default)
    if raw is None:
        raise ConfigError(f"missing required key '{key}'")
    if not isinstance(raw, int) or isinstance(raw, bool):
        raise ConfigError(f"key '{key}' must be an integer")
    if raw < minimum:
        raise ConfigError(f"key '{key}' must be at least {minimum}, got {raw}")
    return raw


def _q_diagonal(data: dict) -> np.ndarray:
    """Noise covariance diagonal; full matrices must be diagonal."""
    if "q_diag" in data:
        raw = np.asarray(data["q_diag"], dtype=float)
        if raw.ndim != 1 or raw.shape[0] != 3:
            raise ConfigError("key 'q_diag' must hold exactly 3 entries")
    elif "q" in data:
        raw = np.asarray(data["q"], dtype=float)
        if raw.shape != (3, 3):
            raise ConfigError("key 'q' must be a 3x3 matrix")
        if np.any(raw - np.diag(np.diagonal(raw))):
            raise ConfigError(
                "key 'q' has off-diagonal entries; the noise model assumes "
                "independent components, so Q must be diagonal"
            )
        raw = np.diagonal(raw).copy()
    else:
        raise ConfigError("missing required key 'q_diag'")
    if not np.all(np.isfinite(raw)) or np.any(raw < 0):
        raise ConfigError("noise covariance diagonal must be finite and nonnegative")
    return raw


def _covariance(value, dim: int) -> np.ndarray:
    """initial_cov as scalar multiple of I, diagonal vector, or full matrix."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(dim)
    if arr.ndim == 1:
        if arr.shape[0] != dim:
            raise ConfigError(
                f"key 'initial_cov' diagonal must have length {dim}, got {arr.shape[0]}"
            )
        return np.diag(arr)
    if arr.shape != (dim, dim):
        raise ConfigError(
            f"key 'initial_cov' must be {dim}x{dim} for this scenario, got {arr.shape}"
        )
    return arr


def parse_config(data: dict, source: str = "config") -> ScenarioConfig:
    """Validate a parsed JSON object into a ScenarioConfig."""
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    kind = _require(data, "kind")
    if kind not in KINDS:
        raise ConfigError(f"key 'kind' must be one of {KINDS}, got {kind!r}")
    dim = 3 if kind == "rigidbody" else 6

    dt = _positive_float(data, "dt")
    try:
        t_final = float(_require(data, "t_final"))
    except (TypeError, ValueError):
        raise ConfigError("key 't_final' must be a number") from None
    if t_final < dt:
        raise ConfigError(f"key 't_final' must be at least dt = {dt}, got {t_final}")

    n_samples = _int_at_least(data, "n_samples", 2)
    master_seed = _int_at_least(data, "master_seed", 0, default=0)
    substeps = _int_at_least(data, "substeps", 1, default=1)

    q_diag = _q_diagonal(data)

    mean_raw = _require(data, "initial_mean")
    try:
        mean = as_finite_vector(mean_raw, dim, "initial_mean")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        cov = _covariance(_require(data, "initial_cov"), dim)
        initial = GaussianBelief(mean, cov)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"key 'initial_cov': {exc}") from None

    out_dir = data.get("out_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise ConfigError("key 'out_dir' must be a string path")

    inertia_diag = None
    mu_grav = None
    r_min = None
    if kind == "rigidbody":
        raw = _require(data, "inertia_diag")
        try:
            inertia_diag = InertiaModel(np.asarray(raw, dtype=float)).j_diag
        except ValueError as exc:
            raise ConfigError(f"key 'inertia_diag': {exc}") from None
    else:
        mu_grav = _positive_float(data, "mu_grav")
        if "r_min" in data:
            r_min = float(data["r_min"])
            if not (np.isfinite(r_min) and r_min >= 0):
                raise ConfigError(f"key 'r_min' must be finite and nonnegative, got {r_min}")
        else:
            r_min = 1e-3 * float(np.linalg.norm(mean[:3]))

    # grid arithmetic must close: t_final an integer number of dt steps
    try:
        uniform_grid(t_final, dt)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    return ScenarioConfig(
        kind=kind,
        q_diag=q_diag,
        initial=initial,
        dt=dt,
        t_final=t_final,
        n_samples=n_samples,
        master_seed=master_seed,
        substeps=substeps,
        out_dir=out_dir,
        inertia_diag=inertia_diag,
        mu_grav=mu_grav,
        r_min=r_min,
    )


def load_config(path) -> ScenarioConfig:
    """Read and validate a scenario file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {p} is not valid JSON: {exc}") from None
    return parse_config(data, source=str(p))


def _bundle_root():
    return resources.files("sdemoments").joinpath("configs")


def bundled_names() -> list[str]:
    """Names of the scenario files shipped with the package."""
    return sorted(
        entry.name[: -len(".json")]
        for entry in _bundle_root().iterdir()
        if entry.name.endswith(".json")
    )


def load_bundled(name: str) -> ScenarioConfig:
    """Load a shipped scenario by name (see bundled_names())."""
    entry = _bundle_root().joinpath(f"{name}.json")
    try:
        text = entry.read_text()
    except (FileNotFoundError, OSError):
        raise ConfigError(
            f"no bundled scenario named {name!r}; available: {', '.join(bundled_names())}"
        ) from None
    return parse_config(json.loads(text), source=f"bundled:{name}")
