"""Partial linear observations and the projection algebra of the guided
bridge construction."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Optional, Union

import numpy as np
import scipy.linalg

from .errors import (
    EllipticityViolationError,
    InvalidObservationError,
)
from .sde import ModelSpec, diffusion_values, gram

ORTHONORMAL_TOL = 1e-10
ANCHOR_TOL = 1e-10


@dataclass(frozen=True)
class Observation:
    """One linear observation L x(time) = value.

    ``matrix`` is (m, n) with orthonormal rows, ``value`` is (m,).
    ``window`` is the length of the correction interval before ``time``
    during which the guiding pull acts; ``anchor`` is any state with
    L anchor = value.  Both default during validation: the window to the
    gap since the previous observation, the anchor to the minimal-norm
    solution matrix.T @ value.
    """

    time: float
    matrix: np.ndarray
    value: np.ndarray
    window: Optional[float] = None
    anchor: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "time", float(self.time))
        object.__setattr__(self, "matrix",
                           np.atleast_2d(np.asarray(self.matrix, dtype=float)))
        object.__setattr__(self, "value",
                           np.atleast_1d(np.asarray(self.value, dtype=float)))
        if self.window is not None:
            object.__setattr__(self, "window", float(self.window))
        if self.anchor is not None:
            object.__setattr__(self, "anchor",
                               np.asarray(self.anchor, dtype=float))

    @property
    def m(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class ObservationSet:
    """Ordered collection of observations.

    Validation (see :func:`validate`) fills defaults and checks the
    invariants; simulation entry points require a validated set.
    """

    items: tuple[Observation, ...] = ()
    validated: bool = False

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    @property
    def times(self) -> np.ndarray:
        return np.array([ob.time for ob in self.items])

    @property
    def min_window(self) -> float:
        """Smallest window length, infinity for an empty set."""
        if not self.validated:
            raise InvalidObservationError(
                "min_window requires a validated observation set")
        if not self.items:
            return np.inf
        return min(ob.window for ob in self.items)


def validate(obs: Union[ObservationSet, Iterable[Observation]],
             dim: Optional[int] = None) -> ObservationSet:
    """Check observation invariants and fill defaults.

    Requires strictly increasing positive times, orthonormal rows of
    each matrix, windows that stay within the gap to the previous
    observation, and anchors consistent with the observed values.
    Returns a new validated set.
    """
    items = tuple(obs.items if isinstance(obs, ObservationSet) else obs)
    n = dim
    checked = []
    prev_time = 0.0
    for k, ob in enumerate(items):
        mat = ob.matrix
        if mat.ndim != 2:
            raise InvalidObservationError(
                "observation matrix must be two-dimensional", index=k,
                field="matrix")
        m, cols = mat.shape
        if n is None:
            n = cols
        if cols != n:
            raise InvalidObservationError(
                f"observation matrix has {cols} columns, expected {n}",
                index=k, field="matrix")
        if not 1 <= m <= n:
            raise InvalidObservationError(
                f"observation matrix must have between 1 and {n} rows",
                index=k, field="matrix")
        if not np.all(np.isfinite(mat)):
            raise InvalidObservationError("observation matrix must be finite",
                                          index=k, field="matrix")
        if ob.value.shape != (m,) or not np.all(np.isfinite(ob.value)):
            raise InvalidObservationError(
                f"observed value must be a finite vector of length {m}",
                index=k, field="value")
        dev = float(np.abs(mat @ mat.T - np.eye(m)).max())
        if dev > ORTHONORMAL_TOL:
            raise InvalidObservationError(
                f"rows of the observation matrix are not orthonormal "
                f"(Gram deviation {dev:.3e})", index=k, field="matrix")
        if not np.isfinite(ob.time) or ob.time <= prev_time:
            raise InvalidObservationError(
                "observation times must be strictly increasing and positive",
                index=k, field="time")
        gap = ob.time - prev_time
        window = gap if ob.window is None else ob.window
        if not (0.0 < window <= gap * (1.0 + 1e-12) + 1e-15):
            raise InvalidObservationError(
                f"correction window {window} must lie in (0, {gap}]; it may "
                "not reach past the previous observation time", index=k,
                field="window")
        anchor = mat.T @ ob.value if ob.anchor is None else ob.anchor
        if anchor.shape != (n,) or not np.all(np.isfinite(anchor)):
            raise InvalidObservationError(
                f"anchor must be a finite vector of length {n}",
                index=k, field="anchor")
        miss = float(np.abs(mat @ anchor - ob.value).max())
        if miss > ANCHOR_TOL:
            raise InvalidObservationError(
                f"anchor is inconsistent with the observed value "
                f"(|L u - v| = {miss:.3e})", index=k, field="anchor")
        checked.append(replace(ob, window=window, anchor=anchor))
        prev_time = ob.time
    return ObservationSet(items=tuple(checked), validated=True)


# ---------------------------------------------------------------------------
# projection algebra

@dataclass(frozen=True)
class ProjectionBundle:
    """Derived matrices of one observation channel at a point (t, z).

    With a = sigma sigma*: ``A = (L a L*)^-1`` is the precision of the
    observed combination under the diffusion metric, ``beta = sigma* L* A``
    maps channel residuals to noise coordinates, ``P = a L* A L`` is the
    oblique projection onto the pulled directions, and
    ``log_eta = 0.5 log det A``.
    """

    A: np.ndarray
    beta: np.ndarray
    P: np.ndarray
    log_eta: float


def channel_precision(a: np.ndarray, L: np.ndarray):
    """(L a L*)^-1 and its log-determinant, for shared or batched ``a``.

    The inverse is formed by a Cholesky factorization of L a L*, never by
    a direct inversion of an unfactorized matrix.
    """
    m = L.shape[0]
    if a.ndim == 2:
        mat = L @ a @ L.T
        mat = 0.5 * (mat + mat.T)
        try:
            chol = scipy.linalg.cho_factor(mat, lower=True)
        except scipy.linalg.LinAlgError as exc:
            raise EllipticityViolationError(
                f"L a L* is not positive definite: {exc}") from exc
        prec = scipy.linalg.cho_solve(chol, np.eye(m))
        prec = 0.5 * (prec + prec.T)
        logdet = -2.0 * float(np.sum(np.log(np.diag(chol[0]))))
        return prec, logdet
    mat = np.einsum("ai,...ij,bj->...ab", L, a, L)
    mat = 0.5 * (mat + np.swapaxes(mat, -1, -2))
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise EllipticityViolationError(
            f"L a L* is not positive definite: {exc}") from exc
    cinv = np.linalg.solve(chol, np.broadcast_to(np.eye(m), mat.shape))
    prec = np.einsum("...ki,...kj->...ij", cinv, cinv)
    logdet = -2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)),
                           axis=-1)
    return prec, logdet


def guide_pull(a: np.ndarray, L: np.ndarray, resid: np.ndarray) -> np.ndarray:
    """a L* (L a L*)^-1 resid for batched residuals of shape (..., m)."""
    m = L.shape[0]
    if a.ndim == 2:
        mat = L @ a @ L.T
        mat = 0.5 * (mat + mat.T)
        try:
            chol = scipy.linalg.cho_factor(mat, lower=True)
        except scipy.linalg.LinAlgError as exc:
            raise EllipticityViolationError(
                f"L a L* is not positive definite: {exc}") from exc
        coef = scipy.linalg.cho_solve(chol, np.atleast_2d(resid).T).T
        out = coef @ (L @ a)
        return out[0] if resid.ndim == 1 else out
    mat = np.einsum("ai,...ij,bj->...ab", L, a, L)
    mat = 0.5 * (mat + np.swapaxes(mat, -1, -2))
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise EllipticityViolationError(
            f"L a L* is not positive definite: {exc}") from exc
    y = np.linalg.solve(chol, resid[..., None])
    coef = np.linalg.solve(np.swapaxes(chol, -1, -2), y)[..., 0]
    return np.einsum("...ij,aj,...a->...i", a, L, coef)


def bundle(model: ModelSpec, obs: ObservationSet, t: float, z,
           k: int) -> ProjectionBundle:
    """Projection bundle of observation ``k`` at the point (t, z)."""
    ob = obs.items[k]
    z = np.asarray(z, dtype=float)
    sig = diffusion_values(model.diffusion, t, z[None, :], model.dim)
    if sig.ndim == 3:
        sig = sig[0]
    a = sig @ sig.T
    prec, logdet = channel_precision(a, ob.matrix)
    beta = sig.T @ ob.matrix.T @ prec
    proj = a @ ob.matrix.T @ prec @ ob.matrix
    return ProjectionBundle(A=prec, beta=beta, P=proj, log_eta=0.5 * logdet)


def guiding_drift(model: ModelSpec, obs: ObservationSet, t: float,
                  z) -> np.ndarray:
    """Pull toward the active observations at the point (t, z).

    Sums -a L* (L a L*)^-1 (L z - v) / (T_k - t) over every observation
    whose window contains ``t``.  The window is treated as closed on the
    left, so the pull is already active at the node where a window
    opens; it is never evaluated at an observation time itself.  The
    result does not depend on the choice of anchors.
    """
    z = np.asarray(z, dtype=float)
    total = np.zeros_like(z)
    sig = None
    a = None
    for ob in obs.items:
        if ob.time - ob.window <= t < ob.time:
            if a is None:
                sig = diffusion_values(model.diffusion, t, z[None, :],
                                       model.dim)
                if sig.ndim == 3:
                    sig = sig[0]
                a = sig @ sig.T
            resid = ob.matrix @ z - ob.value
            total -= guide_pull(a, ob.matrix, resid) / (ob.time - t)
    return total
