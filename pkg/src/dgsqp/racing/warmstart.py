"""Warm-start input sequences for the racing games.

Both generators work agent by agent in the Frenet frame and return the stacked
decision vector for either formulation. For approximate games the arcspeed
input is filled with the finite-difference progress rate of the Frenet
rollout, so the warm start has zero lag error.
"""

from __future__ import annotations

import csv
import functools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import jax.numpy as jnp
import numpy as np

from dgsqp.game import DynamicGame, GameDimensions
from dgsqp.track import ParametricTrack
from dgsqp.vehicle import STATE_DIM, VehicleParams, _jitted_step, discrete_dynamics

from .games import frenet_indices

log = logging.getLogger(__name__)


class WarmStart(NamedTuple):
    inputs: np.ndarray  # stacked decision vector
    failed: bool


@dataclass(frozen=True)
class PidGains:
    k_v: float = 2.0
    k_y: float = 1.5
    k_psi: float = 1.5
    k_i: float = 0.0


@dataclass(frozen=True, eq=False)
class Raceline:
    """Reference (e_y, v) as a function of progress, linearly interpolated."""

    s: np.ndarray
    e_y: np.ndarray
    v: np.ndarray
    period: float | None = None

    def __post_init__(self):
        s = np.asarray(self.s, float)
        if s.size == 0:
            raise ValueError("raceline has no samples")
        if s.size > 1 and np.any(np.diff(s) <= 0):
            raise ValueError("raceline progress must be strictly increasing")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "e_y", np.asarray(self.e_y, float))
        object.__setattr__(self, "v", np.asarray(self.v, float))
        if not (self.e_y.shape == self.v.shape == s.shape):
            raise ValueError("raceline columns must have equal length")

    def reference(self, s):
        xp = jnp if not isinstance(s, (float, np.floating, np.ndarray)) else np
        return (
            xp.interp(s, self.s, self.e_y, period=self.period),
            xp.interp(s, self.s, self.v, period=self.period),
        )

    @classmethod
    def centerline(cls, track: ParametricTrack, speed: float) -> "Raceline":
        s = np.array([0.0, track.length])
        return cls(s, np.zeros(2), np.full(2, speed), track.length if track.closed else None)


def load_raceline(path: str | Path, track: ParametricTrack | None = None) -> Raceline:
    """Read a CSV with header ``s,e_y,v``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"raceline file {path} has no samples")
    try:
        cols = {k: np.array([float(r[k]) for r in rows]) for k in ("s", "e_y", "v")}
    except KeyError as exc:
        raise ValueError(f"raceline file {path} lacks column {exc}") from exc
    period = track.length if track is not None and track.closed else None
    return Raceline(cols["s"], cols["e_y"], cols["v"], period)


def curvature_raceline(
    track: ParametricTrack, v_max: float, a_lat: float, a_long: float, spacing: float = 0.05
) -> Raceline:
    """Centerline raceline whose speed respects lateral and longitudinal acceleration caps.

    The speed starts from ``min(v_max, sqrt(a_lat / |kappa|))`` on the smoothed
    centerline and is then limited by forward and backward passes of
    ``v dv/ds <= a_long``.
    """
    n = max(int(np.ceil(track.length / spacing)), 2)
    s = np.linspace(0.0, track.length, n, endpoint=not track.closed)
    kappa = np.abs(np.asarray(track.smoothed().curvature(s)))
    v = np.minimum(v_max, np.sqrt(a_lat / np.maximum(kappa, 1e-9)))
    ds = np.diff(s, append=s[-1] + (track.length - s[-1] if track.closed else spacing))
    for _ in range(2 if track.closed else 1):  # second sweep settles the wrap-around
        for k in range(1, n + (1 if track.closed else 0)):
            i, j = k - 1, k % n
            v[j] = min(v[j], np.sqrt(v[i] ** 2 + 2 * a_long * ds[i]))
        for k in range(n - 2 + (1 if track.closed else 0), -1, -1):
            i, j = k, (k + 1) % n
            v[i] = min(v[i], np.sqrt(v[j] ** 2 + 2 * a_long * ds[i]))
    return Raceline(s, np.zeros(n), v, track.length if track.closed else None)


def save_raceline(line: Raceline, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["s", "e_y", "v"])
        for row in zip(line.s, line.e_y, line.v):
            writer.writerow([f"{x:.6f}" for x in row])


# -- PID ----------------------------------------------------------------------------


def _steer_feedforward(kappa: float, e_y: float, p: VehicleParams) -> float:
    # steady-state kinematic steering for path curvature kappa
    k_eff = kappa / max(1.0 - e_y * kappa, 1e-3)
    beta = np.arcsin(np.clip(p.l_r * k_eff, -1.0, 1.0))
    return float(np.arctan(np.tan(beta) * (p.l_f + p.l_r) / p.l_r))


def pid_rollout(
    track: ParametricTrack,
    params: VehicleParams,
    x0: np.ndarray,
    horizon: int,
    model: str = "kinematic",
    targets: tuple[float, float] | None = None,
    gains: PidGains = PidGains(),
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Closed-loop Frenet simulation of one agent; returns (inputs, states, failed)."""
    idx = frenet_indices(model)
    step = _jitted_step(f"{model}_frenet", params, track, 1)
    x = np.asarray(x0, float)
    v_ref, e_ref = targets if targets is not None else (x[0], x[idx["e_y"]])
    inputs = np.zeros((horizon, 2))
    states = [x]
    failed = False
    integral = 0.0
    for k in range(horizon):
        s, e_y, e_psi = x[idx["s"]], x[idx["e_y"]], x[idx["e_psi"]]
        err = e_y - e_ref
        integral += err * params.dt
        kappa = float(track.curvature(np.float64(s)))
        a = gains.k_v * (v_ref - x[0])
        delta = (
            _steer_feedforward(kappa, e_y, params)
            - gains.k_y * err
            - gains.k_psi * e_psi
            - gains.k_i * integral
        )
        u = np.clip([a, delta], params.u_lower, params.u_upper)
        inputs[k] = u
        x = np.asarray(step(jnp.asarray(x), jnp.asarray(u)))
        states.append(x)
        width = max(float(track.width_left(np.float64(x[idx["s"]]))), float(track.width_right(np.float64(x[idx["s"]]))))
        if not np.all(np.isfinite(x)) or abs(x[idx["e_y"]]) > 2 * width:
            failed = True
            break
    return inputs, np.array(states), failed


def _assemble(game_or_formulation: str, per_agent: list[tuple[np.ndarray, np.ndarray]], model: str, dt: float) -> np.ndarray:
    """Stack per-agent (inputs, states) into the game's decision vector."""
    idx = frenet_indices(model)
    parts = []
    for inputs, states in per_agent:
        if game_or_formulation == "approximate":
            v_bar = np.diff(states[:, idx["s"]]) / dt
            parts.append(np.column_stack([inputs, v_bar]).ravel())
        else:
            parts.append(inputs.ravel())
    return np.concatenate(parts)


def warm_start_pid(
    track: ParametricTrack,
    params: Sequence[VehicleParams],
    x0,
    horizon: int,
    model: str = "kinematic",
    formulation: str = "exact",
    targets: Sequence[tuple[float, float]] | None = None,
    gains: PidGains = PidGains(),
) -> WarmStart:
    """Per-agent PID holding each agent's initial speed and lateral offset."""
    n = STATE_DIM[model]
    x0 = np.asarray(x0, float)
    per_agent, failed = [], False
    for i, p in enumerate(params):
        tgt = targets[i] if targets is not None else None
        inputs, states, bad = pid_rollout(track, p, x0[i * n:(i + 1) * n], horizon, model, tgt, gains)
        failed |= bad
        per_agent.append((inputs, states))
    if failed:
        m_i = 3 if formulation == "approximate" else 2
        log.warning("PID warm start left the track; using zeros")
        return WarmStart(np.zeros(len(params) * horizon * m_i), True)
    return WarmStart(_assemble(formulation, per_agent, model, params[0].dt), False)


def warm_start_from_game(game: DynamicGame, mode: str = "pid", raceline: Raceline | None = None) -> WarmStart:
    """Warm start matching a racing game built by `build_game`."""
    info = game.info
    variant = info["variant"]
    args = (info["track"], info["params"], info["x0_frenet"], game.dims.horizon, variant.model, variant.formulation)
    if mode == "pid":
        return warm_start_pid(*args)
    if mode == "tracking":
        line = raceline or Raceline.centerline(info["track"], float(np.mean(_speeds(info["x0_frenet"], variant.model, len(info["params"])))))
        return warm_start_tracking(*args, raceline=line)
    raise ValueError(f"unknown warm-start mode {mode!r}")


def _speeds(x0, model, M):
    n = STATE_DIM[model]
    return [x0[i * n] for i in range(M)]


# -- raceline tracking via a single-agent DG-SQP solve ---------------------------------


@dataclass(frozen=True)
class TrackingWeights:
    q_y: float = 10.0
    q_v: float = 1.0
    q_psi: float = 1.0
    R: tuple[float, float] = (0.1, 0.1)
    P: tuple[float, float] = (1.0, 1.0)


@functools.lru_cache(maxsize=32)
def _tracking_structure(model: str, track: ParametricTrack, params: VehicleParams, raceline: Raceline, horizon: int, weights: TrackingWeights):
    idx = frenet_indices(model)
    step = discrete_dynamics(f"{model}_frenet", params, track)
    R = jnp.asarray(weights.R)
    P = jnp.asarray(weights.P)

    def objectives(xs, us, aux):
        s, e_y, e_psi = xs[1:, idx["s"]], xs[1:, idx["e_y"]], xs[1:, idx["e_psi"]]
        e_ref, v_ref = raceline.reference(s)
        prev = jnp.concatenate([aux[None, :2], us[:-1]], axis=0)
        J = (
            weights.q_y * jnp.sum((e_y - e_ref) ** 2)
            + weights.q_v * jnp.sum((xs[1:, 0] - v_ref) ** 2)
            + weights.q_psi * jnp.sum(e_psi**2)
            + jnp.sum(us**2 * R)
            + jnp.sum((us - prev) ** 2 * P)
        )
        return J[None]

    def constraints(xs, us, aux):
        s = xs[1:, idx["s"]]
        e = xs[1:, idx["e_y"]]
        lo, hi = jnp.asarray(params.u_lower), jnp.asarray(params.u_upper)
        box = jnp.stack([us - hi, lo - us], axis=1).reshape(-1)
        bound = jnp.stack([e - track.width_left(s), -track.width_right(s) - e], axis=1).reshape(-1)
        return jnp.concatenate([box, bound])

    dims = GameDimensions(1, horizon, (STATE_DIM[model],), (2,), 6 * horizon)
    return dims, step, objectives, constraints


def tracking_game(track, params: VehicleParams, raceline: Raceline, x0, horizon: int, model="kinematic", weights=TrackingWeights()) -> DynamicGame:
    dims, dyn, obj, con = _tracking_structure(model, track, params, raceline, horizon, weights)
    return DynamicGame(dims, np.asarray(x0, float), dyn, obj, con, params.u_lower, params.u_upper, np.zeros(2), name="tracking")


def warm_start_tracking(
    track: ParametricTrack,
    params: Sequence[VehicleParams],
    x0,
    horizon: int,
    model: str = "kinematic",
    formulation: str = "exact",
    raceline: Raceline | None = None,
    config=None,
) -> WarmStart:
    """Each agent tracks the raceline alone (no collision avoidance); PID fallback."""
    from dgsqp.game import rollout
    from dgsqp.solver import SolverConfig, solve

    if raceline is None:
        raise ValueError("raceline tracking needs a raceline")
    config = config or SolverConfig()
    n = STATE_DIM[model]
    x0 = np.asarray(x0, float)
    per_agent = []
    for i, p in enumerate(params):
        xi = x0[i * n:(i + 1) * n]
        pid_u, _, pid_failed = pid_rollout(track, p, xi, horizon, model)
        game = tracking_game(track, p, raceline, xi, horizon, model)
        try:
            result = solve(game, pid_u.ravel(), config)
            ok = result.converged
        except (ValueError, FloatingPointError) as exc:
            log.debug("tracking solve failed: %s", exc)
            ok = False
        if not ok:
            log.info("raceline tracking failed for agent %d; falling back to PID", i)
            return warm_start_pid(track, params, x0, horizon, model, formulation)
        inputs = result.u.reshape(horizon, 2)
        states = rollout(game, result.u).states
        per_agent.append((inputs, states))
    return WarmStart(_assemble(formulation, per_agent, model, params[0].dt), False)
