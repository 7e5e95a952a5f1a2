"""Head-to-head racing games: exact Frenet-frame and contouring-approximation variants.

Constraint rows are ordered as

1. input boxes, agent by agent, step by step: ``u - u_u`` then ``u_l - u``;
2. track boundaries for k = 1..N, agent by agent: ``e - w+`` then ``-w- - e``;
3. collision avoidance for k = 1..N, pair by pair: ``(r^i + r^j)^2 - ||p^i - p^j||^2``;
4. (approximate games only) arcspeed bounds ``v_bar - v_max`` then ``-v_max - v_bar``.

For the exact games ``e`` is the Frenet lateral offset; for the approximate
ones it is the contouring error evaluated at the approximate progress.
"""

from __future__ import annotations

import dataclasses
import functools
import itertools
from dataclasses import dataclass, field
from typing import Sequence

import jax.numpy as jnp
import numpy as np

from dgsqp.game import DynamicGame, GameDimensions, GameError
from dgsqp.track import ParametricTrack, frenet_to_inertial
from dgsqp.vehicle import STATE_DIM, VehicleParams, discrete_dynamics, frenet_to_inertial_state

CONSTRAINT_KINDS = ("input", "boundary", "collision")


class GameConstructionError(GameError):
    """Initial condition outside the feasible set of the game."""


@dataclass(frozen=True)
class AgentWeights:
    R: tuple[float, float] = (0.1, 0.1)
    P: tuple[float, float] = (1.0, 1.0)
    q_own: float = 1.0  # weight on own terminal progress (rewarded)
    q_opp: float = 1.0  # weight on each opponent's terminal progress (penalized)
    radius: float = 0.15


@dataclass(frozen=True)
class RacingWeights:
    agents: tuple[AgentWeights, ...] = (AgentWeights(), AgentWeights())
    q_l: float = 1e3
    v_max: float | None = None  # defaults to 1.5x the vehicles' top speed
    competition: str = "difference"  # or "squared"
    path_spacing: float = 0.1  # knot spacing of the smooth reference path (approximate games)

    def __post_init__(self):
        for w in self.agents:
            if min(w.R) < 0 or min(w.P) < 0:
                raise ValueError("R and P must be PSD (non-negative diagonals)")
            if w.radius <= 0:
                raise ValueError("collision radius must be positive")
        if self.q_l <= 0:
            raise ValueError("q_l must be positive")
        if self.path_spacing <= 0:
            raise ValueError("path_spacing must be positive")
        if self.competition not in ("difference", "squared"):
            raise ValueError(f"unknown competition form {self.competition!r}")


@dataclass(frozen=True)
class GameVariant:
    model: str  # kinematic | dynamic
    formulation: str  # exact | approximate

    def __post_init__(self):
        if self.model not in ("kinematic", "dynamic"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.formulation not in ("exact", "approximate"):
            raise ValueError(f"unknown formulation {self.formulation!r}")

    @property
    def label(self) -> str:
        hat = "hat_" if self.formulation == "approximate" else ""
        return f"{hat}gamma_{self.model[:3]}"


# -- state layout helpers ----------------------------------------------------------


def frenet_indices(model: str) -> dict[str, int]:
    if model == "kinematic":
        return {"v": 0, "s": 1, "e_y": 2, "e_psi": 3}
    return {"v_x": 0, "v_y": 1, "omega": 2, "s": 3, "e_y": 4, "e_psi": 5}


def inertial_indices(model: str) -> dict[str, int]:
    if model == "kinematic":
        return {"v": 0, "x": 1, "y": 2, "psi": 3, "s_bar": 4}
    return {"v_x": 0, "v_y": 1, "omega": 2, "x": 3, "y": 4, "psi": 5, "s_bar": 6}


def lag_error(track, p, s_bar):
    """e_l = [-cos Phi, -sin Phi] (p - tau(s_bar)); positive when behind s_bar."""
    t = track.tangent_vector(s_bar)
    diff = p - track.position(s_bar)
    return -t[..., 0] * diff[..., 0] - t[..., 1] * diff[..., 1]


def contour_error(track, p, s_bar):
    """e_c = [-sin Phi, cos Phi] (p - tau(s_bar)); lateral offset, left positive."""
    t = track.tangent_vector(s_bar)
    diff = p - track.position(s_bar)
    return -t[..., 1] * diff[..., 0] + t[..., 0] * diff[..., 1]


# -- structure (cached so that games sharing it share compiled oracles) ------------


def _input_cost(us_i, u_prev_i, w: AgentWeights):
    R = jnp.asarray(w.R)
    P = jnp.asarray(w.P)
    prev = jnp.concatenate([u_prev_i[None, :], us_i[:-1]], axis=0)
    du = us_i - prev
    return jnp.sum(us_i**2 * R) + jnp.sum(du**2 * P)


def _competition(progress, i: int, weights: RacingWeights):
    w = weights.agents[i]
    total = -w.q_own * progress[i]
    for j in range(len(progress)):
        if j != i:
            opp = progress[j] ** 2 if weights.competition == "squared" else progress[j]
            total = total + w.q_opp * opp
    return total


@functools.lru_cache(maxsize=64)
def _structure(
    variant: GameVariant,
    track: ParametricTrack,
    params: tuple[VehicleParams, ...],
    weights: RacingWeights,
    horizon: int,
    include: frozenset,
    v_max: float,
):
    M = len(params)
    model = variant.model
    approx = variant.formulation == "approximate"
    n_bar = STATE_DIM[model]
    n_i = n_bar + (1 if approx else 0)
    m_i = 3 if approx else 2
    idx = inertial_indices(model) if approx else frenet_indices(model)
    dt = params[0].dt
    path = track.smoothed(weights.path_spacing) if approx else track

    if approx:
        steps = [discrete_dynamics(f"{model}_inertial", p) for p in params]
    else:
        steps = [discrete_dynamics(f"{model}_frenet", p, track) for p in params]

    def dynamics(x, u):
        parts = []
        for i in range(M):
            xi = x[i * n_i:(i + 1) * n_i]
            ui = u[i * m_i:(i + 1) * m_i]
            if approx:
                nxt = steps[i](xi[:n_bar], ui[:2])
                parts.append(jnp.concatenate([nxt, (xi[n_bar] + dt * ui[2])[None]]))
            else:
                parts.append(steps[i](xi, ui))
        return jnp.concatenate(parts)

    def agent_state(xs, i):
        return xs[:, i * n_i:(i + 1) * n_i]

    def positions(xs, i):
        xi = agent_state(xs, i)
        if approx:
            return jnp.stack([xi[:, idx["x"]], xi[:, idx["y"]]], axis=-1)
        return frenet_to_inertial(track, xi[:, idx["s"]], xi[:, idx["e_y"]])

    def progress_of(xs, i):
        return agent_state(xs, i)[:, idx["s_bar"] if approx else idx["s"]]

    def objectives(xs, us, aux):
        progress = [progress_of(xs, i)[-1] for i in range(M)]
        costs = []
        for i in range(M):
            us_i = us[:, i * m_i:i * m_i + 2]
            u_prev = aux[2 * i:2 * i + 2]
            J = _input_cost(us_i, u_prev, weights.agents[i]) + _competition(progress, i, weights)
            if approx:
                e_l = lag_error(path, positions(xs, i)[1:], progress_of(xs, i)[1:])
                J = J + weights.q_l * jnp.sum(e_l**2)
            costs.append(J)
        return jnp.stack(costs)

    def constraints(xs, us, aux):
        rows = []
        if "input" in include:
            for i in range(M):
                lo = jnp.asarray(params[i].u_lower)
                hi = jnp.asarray(params[i].u_upper)
                ui = us[:, i * m_i:i * m_i + 2]
                rows.append(jnp.stack([ui - hi, lo - ui], axis=1).reshape(-1))
        if "boundary" in include:
            for i in range(M):
                s = progress_of(xs, i)[1:]
                if approx:
                    e = contour_error(path, positions(xs, i)[1:], s)
                else:
                    e = agent_state(xs, i)[1:, idx["e_y"]]
                rows.append(
                    jnp.stack([e - track.width_left(s), -track.width_right(s) - e], axis=1).reshape(-1)
                )
        if "collision" in include:
            for i, j in itertools.combinations(range(M), 2):
                r = weights.agents[i].radius + weights.agents[j].radius
                d = positions(xs, i)[1:] - positions(xs, j)[1:]
                rows.append(r**2 - jnp.sum(d**2, axis=1))
        if approx:
            for i in range(M):
                vb = us[:, i * m_i + 2]
                rows.append(jnp.stack([vb - v_max, -v_max - vb], axis=1).reshape(-1))
        if not rows:
            return jnp.zeros(0)
        return jnp.concatenate(rows)

    n_c = 0
    if "input" in include:
        n_c += M * horizon * 4
    if "boundary" in include:
        n_c += M * horizon * 2
    if "collision" in include:
        n_c += (M * (M - 1) // 2) * horizon
    if approx:
        n_c += M * horizon * 2
    dims = GameDimensions(M, horizon, (n_i,) * M, (m_i,) * M, n_c)
    return dims, dynamics, objectives, constraints


def expected_constraint_count(variant: GameVariant, num_agents: int, horizon: int) -> dict[str, int]:
    """Per-kind row counts of a racing game (for structural audits)."""
    counts = {
        "input": num_agents * horizon * 2 * 2,
        "boundary": num_agents * horizon * 2,
        "collision": num_agents * (num_agents - 1) // 2 * horizon,
    }
    if variant.formulation == "approximate":
        counts["arcspeed"] = num_agents * horizon * 2
    return counts


def default_v_max(params: Sequence[VehicleParams]) -> float:
    """1.5x the largest vehicle top speed."""
    return 1.5 * max(p.v_top for p in params)


def _check_initial_condition(track, params, weights, x0, model):
    n = STATE_DIM[model]
    idx = frenet_indices(model)
    pos = []
    for i in range(len(params)):
        xi = x0[i * n:(i + 1) * n]
        s, e_y = xi[idx["s"]], xi[idx["e_y"]]
        if not (-track.width_right(s) <= e_y <= track.width_left(s)):
            raise GameConstructionError(f"agent {i} starts outside the track (e_y = {e_y:.3f})")
        if 1.0 - e_y * float(track.curvature(np.float64(s))) <= 1e-3:
            raise GameConstructionError(f"agent {i} starts at a curvature singularity")
        pos.append(np.asarray(frenet_to_inertial(track, np.float64(s), np.float64(e_y))))
    for i, j in itertools.combinations(range(len(params)), 2):
        r = weights.agents[i].radius + weights.agents[j].radius
        if np.linalg.norm(pos[i] - pos[j]) < r:
            raise GameConstructionError(f"agents {i} and {j} start in collision")


def build_game(
    variant: GameVariant,
    track: ParametricTrack,
    params: Sequence[VehicleParams],
    weights: RacingWeights,
    x0,
    horizon: int,
    u_prev=None,
    include: Sequence[str] = CONSTRAINT_KINDS,
) -> DynamicGame:
    """Racing game for ``variant`` from a joint Frenet-frame initial state ``x0``."""
    params = tuple(params)
    M = len(params)
    if len(weights.agents) < M:
        raise ValueError("need weights for every agent")
    if M < 2:
        include = tuple(k for k in include if k != "collision")
    weights = dataclasses.replace(weights, agents=weights.agents[:M])
    model = variant.model
    n = STATE_DIM[model]
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (M * n,):
        raise GameError(f"x0 must have length {M * n} for {M} {model} agents")
    _check_initial_condition(track, params, weights, x0, model)
    v_max = weights.v_max if weights.v_max is not None else default_v_max(params)

    dims, dynamics, objectives, constraints = _structure(
        variant, track, params, weights, int(horizon), frozenset(include), float(v_max)
    )
    if variant.formulation == "approximate":
        parts = []
        for i in range(M):
            xi = x0[i * n:(i + 1) * n]
            s = xi[frenet_indices(model)["s"]]
            parts.append(np.concatenate([frenet_to_inertial_state(model, xi, track), [s]]))
        game_x0 = np.concatenate(parts)
        lo = np.concatenate([np.concatenate([p.u_lower, [-v_max]]) for p in params])
        hi = np.concatenate([np.concatenate([p.u_upper, [v_max]]) for p in params])
    else:
        game_x0 = x0
        lo = np.concatenate([p.u_lower for p in params])
        hi = np.concatenate([p.u_upper for p in params])
    aux = np.zeros(2 * M) if u_prev is None else np.asarray(u_prev, dtype=float).reshape(2 * M)
    return DynamicGame(
        dims, game_x0, dynamics, objectives, constraints, lo, hi, aux,
        name=variant.label,
        info={
            "variant": variant, "track": track, "params": params, "weights": weights,
            "x0_frenet": x0, "v_max": float(v_max), "include": tuple(include),
        },
    )


def build_exact_game(track, params, weights, x0, horizon, model="kinematic", **kwargs) -> DynamicGame:
    return build_game(GameVariant(model, "exact"), track, params, weights, x0, horizon, **kwargs)


def build_approx_game(track, params, weights, x0, horizon, model="kinematic", **kwargs) -> DynamicGame:
    return build_game(GameVariant(model, "approximate"), track, params, weights, x0, horizon, **kwargs)


def agent_positions(game: DynamicGame, states: np.ndarray) -> list[np.ndarray]:
    """Inertial x-y positions of every agent along a rolled-out trajectory."""
    variant: GameVariant = game.info["variant"]
    track = game.info["track"]
    M = game.dims.num_agents
    n_i = game.dims.state_dims[0]
    out = []
    for i in range(M):
        xi = states[:, i * n_i:(i + 1) * n_i]
        if variant.formulation == "approximate":
            idx = inertial_indices(variant.model)
            out.append(np.stack([xi[:, idx["x"]], xi[:, idx["y"]]], axis=-1))
        else:
            idx = frenet_indices(variant.model)
            out.append(np.asarray(frenet_to_inertial(track, xi[:, idx["s"]], xi[:, idx["e_y"]])))
    return out


def agent_progress(game: DynamicGame, states: np.ndarray) -> np.ndarray:
    """Progress (exact s or approximate s_bar) of every agent, shape (N+1, M)."""
    variant: GameVariant = game.info["variant"]
    n_i = game.dims.state_dims[0]
    key = "s_bar" if variant.formulation == "approximate" else "s"
    idx = (inertial_indices if variant.formulation == "approximate" else frenet_indices)(variant.model)[key]
    return np.stack([states[:, i * n_i + idx] for i in range(game.dims.num_agents)], axis=1)
