"""Guided bridge simulation: Euler-Maruyama with an observation pull and
terminal projection onto each observed value."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    InvalidConfigurationError,
    InvalidObservationError,
    NumericalBlowupError,
)
from .observations import ObservationSet, guide_pull
from .sde import (
    BLOWUP_FACTOR,
    ModelSpec,
    PathSample,
    TimeGrid,
    _prepare_initial,
    check_coefficients,
    diffusion_values,
    drift_values,
    gram,
    matvec,
    normal_increments,
)


@dataclass(frozen=True)
class BridgeConfig:
    """Options for bridge simulation.

    ``clamp_tolerance`` skips the terminal projection when the residual
    at an observation time is already within the tolerance (0 projects
    always, which is exact for a zero residual anyway).
    ``epsilon_cutoff`` stops every guiding window a distance epsilon
    before its observation time and disables the terminal projection;
    used to study the cut-off approximation.  ``record_increments``
    retains the raw standard-normal draws on the returned path.
    """

    clamp_tolerance: float = 0.0
    epsilon_cutoff: Optional[float] = None
    record_increments: bool = False


@dataclass
class BatchPaths:
    """Simulation output for a batch of paths sharing one grid."""

    grid: TimeGrid
    path_ids: np.ndarray
    states: np.ndarray                       # (P, M+1, n)
    preclamp: dict[int, np.ndarray] = field(default_factory=dict)
    failed_step: np.ndarray = None           # (P,), -1 where clean
    increments: Optional[np.ndarray] = None


def clamp_at_observation(model: ModelSpec, obs: ObservationSet, k: int,
                         z) -> np.ndarray:
    """Project a state at observation time k exactly onto L z = v.

    The correction moves along a L* (L a L*)^-1, the oblique direction
    singled out by the diffusion metric, so L z' = v holds exactly and
    a state already satisfying the constraint is returned unchanged.
    """
    ob = obs.items[k]
    z = np.asarray(z, dtype=float)
    sig = diffusion_values(model.diffusion, ob.time, z[None, :], model.dim)
    if sig.ndim == 3:
        sig = sig[0]
    a = sig @ sig.T
    return z + guide_pull(a, ob.matrix, ob.value - ob.matrix @ z)


def _window_step_table(grid: TimeGrid, obs: ObservationSet,
                       cutoff: Optional[float]):
    """Per observation: (first guided step, one past last guided step,
    observation node index, observation)."""
    table = []
    for k, ob in enumerate(obs.items):
        j0 = grid.window_start_indices[k]
        j1 = grid.obs_indices[k]
        if cutoff is None:
            js = j1
        else:
            try:
                js = grid.index_of(ob.time - cutoff)
            except InvalidConfigurationError as exc:
                raise InvalidConfigurationError(
                    f"grid has no node at T_k - epsilon = {ob.time - cutoff!r} "
                    f"for observation {k}") from exc
            if not j0 <= js <= j1:
                raise InvalidConfigurationError(
                    f"epsilon cutoff leaves the window of observation {k}")
        table.append((j0, js, j1, ob))
    return table


def simulate_batch(model: ModelSpec, obs: ObservationSet, grid: TimeGrid, u,
                   seed: int, path_ids, cfg: Optional[BridgeConfig] = None,
                   validate: bool = False) -> BatchPaths:
    """Euler-Maruyama for a batch of guided bridges.

    Each step adds the guiding pull of every window containing the left
    node (windows are closed on the left, open at the observation time).
    In full-bridge mode the state is projected onto the observed value
    when a step lands on an observation time; the unprojected state is
    retained per observation for the weight computation.  Failed paths
    freeze at their last admissible state and are reported through
    ``failed_step``.
    """
    cfg = cfg or BridgeConfig()
    n = model.dim
    u = _prepare_initial(u, n)
    if obs.items and not obs.validated:
        raise InvalidObservationError(
            "observation set must be validated before simulation")
    cutoff = cfg.epsilon_cutoff
    if cutoff is not None and obs.items:
        if not (0.0 < cutoff < obs.min_window):
            raise InvalidConfigurationError(
                "epsilon_cutoff must lie strictly between 0 and the "
                "smallest window length")
    table = _window_step_table(grid, obs, cutoff)
    clamp_nodes = {} if cutoff is not None else {
        grid.obs_indices[k]: k for k in range(len(obs.items))}

    nodes = grid.nodes
    m_steps = grid.n_steps
    ids = np.asarray(list(path_ids), dtype=int)
    p_count = len(ids)
    xi = np.stack([normal_increments(seed, pid, m_steps, n) for pid in ids]) \
        if p_count else np.zeros((0, m_steps, n))
    states = np.empty((p_count, m_steps + 1, n))
    states[:, 0] = u
    failed = np.full(p_count, -1, dtype=int)
    preclamp: dict[int, np.ndarray] = {}
    cap = BLOWUP_FACTOR * (1.0 + float(np.linalg.norm(u)))
    cur = np.broadcast_to(u, (p_count, n)).copy()
    drift_fn = model.effective_drift

    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(m_steps):
            t = nodes[j]
            dt = nodes[j + 1] - nodes[j]
            b = drift_values(drift_fn, t, cur, n)
            sig = diffusion_values(model.diffusion, t, cur, n)
            if validate:
                check_coefficients(model, t, cur, sig)
            a = None
            total = b
            for j0, js, j1, ob in table:
                if j0 <= j < js:
                    if a is None:
                        a = gram(sig)
                    resid = cur @ ob.matrix.T - ob.value
                    total = total - guide_pull(a, ob.matrix, resid) \
                        / (nodes[j1] - t)
            nxt = cur + total * dt + matvec(sig, xi[:, j]) * np.sqrt(dt)
            bad = (failed < 0) & (
                ~np.isfinite(nxt).all(axis=1)
                | (np.linalg.norm(nxt, axis=1) > cap))
            failed[bad] = j
            keep = failed < 0
            cur = np.where(keep[:, None], nxt, cur)

            k0 = clamp_nodes.get(j + 1)
            if k0 is not None:
                ob = obs.items[k0]
                preclamp[k0] = cur.copy()
                sig_t = diffusion_values(model.diffusion, nodes[j + 1], cur, n)
                a_t = gram(sig_t)
                resid = ob.value - cur @ ob.matrix.T
                move = guide_pull(a_t, ob.matrix, resid)
                if cfg.clamp_tolerance > 0.0:
                    small = np.linalg.norm(resid, axis=1) <= cfg.clamp_tolerance
                    move = np.where(small[:, None], 0.0, move)
                cur = np.where(keep[:, None], cur + move, cur)
            states[:, j + 1] = cur

    return BatchPaths(grid=grid, path_ids=ids, states=states,
                      preclamp=preclamp, failed_step=failed,
                      increments=xi if cfg.record_increments else None)


def _single(model, obs, grid, u, seed, path_id, cfg, validate) -> PathSample:
    batch = simulate_batch(model, obs, grid, u, seed, [path_id], cfg=cfg,
                           validate=validate)
    if batch.failed_step[0] >= 0:
        step = int(batch.failed_step[0])
        raise NumericalBlowupError(
            f"path {path_id} blew up at step {step} (t={grid.nodes[step]:.6g})",
            step_index=step)
    return PathSample(
        grid=grid, states=batch.states[0], seed_id=int(path_id),
        preclamp={k: v[0] for k, v in batch.preclamp.items()},
        increments=batch.increments[0] if batch.increments is not None else None)


def simulate_bridge(model: ModelSpec, obs: ObservationSet, grid: TimeGrid, u,
                    seed: int, path_id: int,
                    cfg: Optional[BridgeConfig] = None,
                    validate: bool = False) -> PathSample:
    """Simulate one guided bridge path; the returned path satisfies
    L y(T_k) = v_k exactly at every observation."""
    return _single(model, obs, grid, u, seed, path_id, cfg, validate)


def simulate_bridge_eps(model: ModelSpec, obs: ObservationSet, grid: TimeGrid,
                        u, seed: int, path_id: int, eps: float,
                        validate: bool = False) -> PathSample:
    """Simulate the cut-off variant whose guiding stops a distance
    ``eps`` before each observation time, without terminal projection.

    With a matching (seed, path_id) the path shares its driving noise
    with :func:`simulate_bridge`, so the two coincide up to the first
    cutoff node.
    """
    cfg = BridgeConfig(epsilon_cutoff=float(eps))
    return _single(model, obs, grid, u, seed, path_id, cfg, validate)
