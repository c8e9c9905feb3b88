"""Built-in model constructors for the command-line runner."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidConfigurationError
from .oracle import LinearModel
from .sde import ModelSpec


@dataclass(frozen=True)
class BuiltModel:
    """A model spec plus, when the dynamics are linear with diagonal
    feedback, the ingredients of its exact Gaussian reference."""

    spec: ModelSpec
    linear: Optional[tuple[np.ndarray, np.ndarray, np.ndarray]] = None

    def linear_reference(self, u) -> Optional[LinearModel]:
        if self.linear is None:
            return None
        f_diag, c, sigma = self.linear
        return LinearModel(F_diag=f_diag, c=c, sigma=sigma, u=u)


def _sigma_matrix(dim: int, sigma) -> np.ndarray:
    arr = np.asarray(sigma, dtype=float)
    if arr.ndim == 0:
        out = float(arr) * np.eye(dim)
    elif arr.ndim == 1:
        if arr.shape != (dim,):
            raise InvalidConfigurationError(
                f"sigma vector must have length {dim}")
        out = np.diag(arr)
    elif arr.shape == (dim, dim):
        out = arr.copy()
    else:
        raise InvalidConfigurationError(
            f"sigma must be a scalar, a length-{dim} vector, or "
            f"a {dim}x{dim} matrix")
    if np.linalg.svd(out, compute_uv=False).min() <= 0:
        raise InvalidConfigurationError("sigma must be nonsingular")
    return out


def _ellipticity_of(sigma: np.ndarray) -> float:
    sv = np.linalg.svd(sigma, compute_uv=False)
    return float(max(sv.max() ** 2, 1.0 / sv.min() ** 2) * (1.0 + 1e-9))


def _vector(dim: int, value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(dim, float(arr))
    if arr.shape != (dim,):
        raise InvalidConfigurationError(f"{name} must have length {dim}")
    return arr


def _linear_spec(dim: int, f_diag: np.ndarray, c: np.ndarray,
                 sigma: np.ndarray, split: bool) -> ModelSpec:
    def drift(t, x):
        return x * f_diag + c

    def zero(t, x):
        return np.zeros_like(x)

    return ModelSpec(
        dim=dim, drift=drift,
        diffusion=lambda t, x: sigma,
        drift_split=(zero, drift) if split else None,
        ellipticity_bound=_ellipticity_of(sigma))


def brownian(dim: int = 1, sigma=1.0, drift_split: bool = False) -> BuiltModel:
    sig = _sigma_matrix(dim, sigma)
    z = np.zeros(dim)
    return BuiltModel(spec=_linear_spec(dim, z, z, sig, drift_split),
                      linear=(z, z, sig))


def drifted_brownian(dim: int = 1, drift=0.0, sigma=1.0,
                     drift_split: bool = False) -> BuiltModel:
    sig = _sigma_matrix(dim, sigma)
    c = _vector(dim, drift, "drift")
    z = np.zeros(dim)
    return BuiltModel(spec=_linear_spec(dim, z, c, sig, drift_split),
                      linear=(z, c, sig))


def ou(dim: int = 1, f_diag=-1.0, offset=0.0, sigma=1.0,
       drift_split: bool = False) -> BuiltModel:
    sig = _sigma_matrix(dim, sigma)
    f = _vector(dim, f_diag, "f_diag")
    c = _vector(dim, offset, "offset")
    return BuiltModel(spec=_linear_spec(dim, f, c, sig, drift_split),
                      linear=(f, c, sig))


def double_well(dim: int = 1, sigma=1.0, bound: float = 10.0) -> BuiltModel:
    """Gradient flow of a double-well potential, b(x) = x - x^3.

    The drift is unbounded, so the model always ships with a split:
    the simulated part clamps b to [-bound, bound] and the remainder is
    handled by the path correction.
    """
    if not bound > 0:
        raise InvalidConfigurationError("bound must be positive")
    sig = _sigma_matrix(dim, sigma)

    def drift(t, x):
        return x - x ** 3

    def bounded(t, x):
        return np.clip(x - x ** 3, -bound, bound)

    def remainder(t, x):
        b = x - x ** 3
        return b - np.clip(b, -bound, bound)

    return BuiltModel(spec=ModelSpec(
        dim=dim, drift=drift, diffusion=lambda t, x: sig,
        drift_split=(bounded, remainder),
        ellipticity_bound=_ellipticity_of(sig)))


REGISTRY = {
    "brownian": brownian,
    "drifted_brownian": drifted_brownian,
    "ou": ou,
    "double_well": double_well,
}


def build_model(name: str, params: dict | None = None,
                drift_split: bool = False) -> BuiltModel:
    """Instantiate a built-in model by name."""
    if name not in REGISTRY:
        raise InvalidConfigurationError(
            f"unknown model '{name}'; available: {sorted(REGISTRY)}")
    params = dict(params or {})
    if name == "double_well":
        if drift_split:
            pass  # always split; the flag is redundant here
        return double_well(**params)
    try:
        return REGISTRY[name](drift_split=drift_split, **params)
    except TypeError as exc:
        raise InvalidConfigurationError(
            f"bad parameters for model '{name}': {exc}") from exc
