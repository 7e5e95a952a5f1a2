"""Dynamic game abstraction, rollout, and exact derivative oracles.

A game is defined by a joint one-step map ``f(x, u)``, a function returning
every agent's cost from a rolled-out trajectory, and a shared constraint map
(``C <= 0`` means satisfied). Costs and constraints are always viewed as
functions of the stacked open-loop decision vector

    u = [u^1_0, ..., u^1_{N-1}, u^2_0, ..., u^M_{N-1}]

obtained by substituting the dynamics recursively from ``x0``.

Derivatives are produced by forward-mode differentiation through the rollout
(``jax.jacfwd``); second derivatives use forward-over-forward composition, so
the cross-agent Hessian blocks include the curvature of the dynamics.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np


class GameError(ValueError):
    """Contract violation when calling into a game (shapes, indices, signs)."""


@dataclass(frozen=True)
class GameDimensions:
    num_agents: int
    horizon: int
    state_dims: tuple[int, ...]
    input_dims: tuple[int, ...]
    num_constraints: int

    def __post_init__(self):
        if self.num_agents < 1 or self.horizon < 1:
            raise GameError("need at least one agent and a horizon of at least one step")
        if len(self.state_dims) != self.num_agents or len(self.input_dims) != self.num_agents:
            raise GameError("state/input dims must be given per agent")
        if min(self.state_dims) < 1 or min(self.input_dims) < 1:
            raise GameError("state and input dimensions must be positive")
        if self.num_constraints < 0:
            raise GameError("number of constraints must be non-negative")

    @property
    def n(self) -> int:
        return sum(self.state_dims)

    @property
    def m(self) -> int:
        return sum(self.input_dims)

    @property
    def num_decision(self) -> int:
        return self.horizon * self.m

    def agent_slice(self, i: int) -> slice:
        """Slice of agent i's inputs in the stacked decision vector."""
        start = self.horizon * sum(self.input_dims[:i])
        return slice(start, start + self.horizon * self.input_dims[i])

    def state_slice(self, i: int) -> slice:
        start = sum(self.state_dims[:i])
        return slice(start, start + self.state_dims[i])

    def input_slice(self, i: int) -> slice:
        start = sum(self.input_dims[:i])
        return slice(start, start + self.input_dims[i])


@dataclass(frozen=True, eq=False)
class DynamicGame:
    """The tuple (N, X, U, f, {J^i}, C) plus an initial state.

    ``dynamics(x, u_k)`` is the joint one-step map. ``objectives(xs, us, aux)``
    returns the length-M vector of agent costs given states ``xs`` (N+1, n)
    and joint inputs ``us`` (N, m); ``constraints(xs, us, aux)`` returns the
    length-n_c constraint vector. All three must be JAX-traceable. ``aux``
    carries per-instance data (for instance the previous input used by rate
    penalties) so that games sharing a structure share compiled oracles.
    """

    dims: GameDimensions
    x0: np.ndarray
    dynamics: Callable
    objectives: Callable
    constraints: Callable
    u_lower: np.ndarray
    u_upper: np.ndarray
    aux: np.ndarray = field(default_factory=lambda: np.zeros(0))
    name: str = "game"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (self.dims.n,):
            raise GameError(f"x0 has shape {x0.shape}, expected ({self.dims.n},)")
        object.__setattr__(self, "x0", x0)
        for name in ("u_lower", "u_upper"):
            val = np.asarray(getattr(self, name), dtype=float)
            if val.shape != (self.dims.m,):
                raise GameError(f"{name} must have length m = {self.dims.m}")
            object.__setattr__(self, name, val)
        object.__setattr__(self, "aux", np.asarray(self.aux, dtype=float))

    @property
    def structure(self) -> tuple:
        return (self.dims, self.dynamics, self.objectives, self.constraints)

    def with_x0(self, x0, aux=None) -> "DynamicGame":
        return DynamicGame(
            self.dims, x0, self.dynamics, self.objectives, self.constraints,
            self.u_lower, self.u_upper, self.aux if aux is None else aux, self.name, dict(self.info),
        )

    def decision_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Box bounds expanded to the stacked decision vector."""
        lo, hi = [], []
        for i in range(self.dims.num_agents):
            sl = self.dims.input_slice(i)
            lo.append(np.tile(self.u_lower[sl], self.dims.horizon))
            hi.append(np.tile(self.u_upper[sl], self.dims.horizon))
        return np.concatenate(lo), np.concatenate(hi)


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray  # (N+1, n)
    inputs: np.ndarray  # (N, m)


@dataclass(frozen=True)
class DerivativeBundle:
    """First and second derivatives of one game at ``(u, lambda)``.

    ``h`` stacks the per-agent cost gradients, ``G`` is the constraint
    Jacobian, ``grad_lagrangian`` stacks ``grad_{u^i} L^i`` and ``L`` is the
    row-blocked matrix of Lagrangian Hessians (block (i, j) is
    ``grad^2_{u^j, u^i} L^i``).
    """

    dims: GameDimensions
    costs: np.ndarray
    constraints: np.ndarray
    h: np.ndarray
    G: np.ndarray
    grad_lagrangian: np.ndarray
    L: np.ndarray
    cost_jacobian: np.ndarray  # (M, n_u): full gradient of every J^i

    def cost_grad(self, i: int) -> np.ndarray:
        return self.h[self.dims.agent_slice(i)]

    def constraint_jac(self, i: int) -> np.ndarray:
        return self.G[:, self.dims.agent_slice(i)]

    def hessian_block(self, i: int, j: int) -> np.ndarray:
        """grad^2_{u^j, u^i} L^i: rows follow agent i, columns agent j."""
        return self.L[self.dims.agent_slice(i), self.dims.agent_slice(j)]


# -- traceable building blocks ----------------------------------------------------


def unflatten_inputs(dims: GameDimensions, u):
    """Stacked decision vector -> joint per-step inputs of shape (N, m)."""
    parts = []
    for i in range(dims.num_agents):
        parts.append(u[dims.agent_slice(i)].reshape(dims.horizon, dims.input_dims[i]))
    return jnp.concatenate(parts, axis=1) if len(parts) > 1 else parts[0]


def flatten_inputs(dims: GameDimensions, us) -> np.ndarray:
    us = np.asarray(us, dtype=float).reshape(dims.horizon, dims.m)
    return np.concatenate(
        [us[:, dims.input_slice(i)].ravel() for i in range(dims.num_agents)]
    )


def _rollout_states(dynamics, x0, us):
    def body(x, u):
        x_next = dynamics(x, u)
        return x_next, x_next

    _, xs = jax.lax.scan(body, x0, us)
    return jnp.concatenate([x0[None, :], xs], axis=0)


class GameOracle:
    """Compiled value/derivative functions shared by all games of one structure."""

    def __init__(self, dims: GameDimensions, dynamics, objectives, constraints):
        self.dims = dims
        M = dims.num_agents
        mask = np.zeros((M, dims.num_decision))
        for i in range(M):
            mask[i, dims.agent_slice(i)] = 1.0
        mask = jnp.asarray(mask)

        def traj(u, x0):
            us = unflatten_inputs(dims, u)
            return _rollout_states(dynamics, x0, us), us

        def values(u, x0, aux):
            xs, us = traj(u, x0)
            J = jnp.atleast_1d(objectives(xs, us, aux))
            C = jnp.atleast_1d(constraints(xs, us, aux)).reshape(-1)
            return J, C

        def stacked(u, x0, aux):
            J, C = values(u, x0, aux)
            return jnp.concatenate([J, C])

        def first(u, x0, aux):
            vals = stacked(u, x0, aux)
            jac = jax.jacfwd(stacked)(u, x0, aux)
            return vals[:M], vals[M:], jac[:M], jac[M:]

        def lagrangians(u, lam, x0, aux):
            J, C = values(u, x0, aux)
            return J + jnp.dot(C, lam)

        def pseudo_grad(u, lam, x0, aux):
            # row i of the reverse-mode Jacobian is grad L^i; keep agent i's block
            (J, C), vjp = jax.vjp(lambda v: values(v, x0, aux), u)
            rows = jax.vmap(lambda e: vjp((e, jnp.broadcast_to(lam, C.shape)))[0])(jnp.eye(M))
            return jnp.sum(rows * mask, axis=0), (J, C)

        def full(u, lam, x0, aux):
            J, C, dJ, G = first(u, x0, aux)
            h = jnp.sum(dJ * mask, axis=0)
            L = jax.jacfwd(lambda v: pseudo_grad(v, lam, x0, aux)[0])(u)
            return J, C, h, G, h + G.T @ lam, L, dJ

        def gauss_newton(u, lam, x0, aux):
            # Curvature of costs/constraints in (x_1..x_N, u); first-order
            # trajectory sensitivities only.
            def z_of(u):
                xs, us = traj(u, x0)
                return jnp.concatenate([xs[1:].ravel(), us.ravel()])

            N, n, m = dims.horizon, dims.n, dims.m

            def lag_of_z(z):
                xs = jnp.concatenate([x0[None, :], z[: N * n].reshape(N, n)], axis=0)
                us = z[N * n:].reshape(N, m)
                J = jnp.atleast_1d(objectives(xs, us, aux))
                C = jnp.atleast_1d(constraints(xs, us, aux)).reshape(-1)
                return J + jnp.dot(C, lam)

            z = z_of(u)
            Z = jax.jacfwd(z_of)(u)
            H = jax.jacfwd(jax.jacfwd(lag_of_z))(z)  # (M, nz, nz)
            full_rows = jnp.einsum("za,izw,wb->iab", Z, H, Z)
            return jnp.sum(full_rows * mask[:, :, None], axis=0)

        self.values = jax.jit(values)
        self.first = jax.jit(first)
        self.pseudo_grad = jax.jit(lambda u, lam, x0, aux: pseudo_grad(u, lam, x0, aux)[0])
        self.first_order = jax.jit(
            lambda u, lam, x0, aux: (lambda r: (r[0], r[1][1], r[1][0]))(pseudo_grad(u, lam, x0, aux))
        )
        self.full = jax.jit(full)
        self.lagrangians = jax.jit(lagrangians)
        self.gauss_newton = jax.jit(gauss_newton)
        self.rollout = jax.jit(lambda u, x0: traj(u, x0)[0])


_ORACLES: dict[tuple, GameOracle] = {}
_ORACLE_LOCK = threading.Lock()


def oracle_for(game: DynamicGame) -> GameOracle:
    key = game.structure
    with _ORACLE_LOCK:
        oracle = _ORACLES.get(key)
        if oracle is None:
            oracle = GameOracle(*key)
            _ORACLES[key] = oracle
    return oracle


# -- public operations --------------------------------------------------------------


def _check_u(game: DynamicGame, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (game.dims.num_decision,):
        raise GameError(
            f"input sequence has shape {u.shape}, expected ({game.dims.num_decision},)"
        )
    return u


def _check_lam(game: DynamicGame, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (game.dims.num_constraints,):
        raise GameError(
            f"dual vector has shape {lam.shape}, expected ({game.dims.num_constraints},)"
        )
    if np.any(lam < 0):
        raise GameError("dual multipliers must be non-negative")
    return lam


def rollout(game: DynamicGame, u) -> Trajectory:
    """Simulate the joint dynamics from ``game.x0`` under the stacked inputs."""
    u = _check_u(game, u)
    xs = np.asarray(oracle_for(game).rollout(u, game.x0))
    us = np.asarray(unflatten_inputs(game.dims, jnp.asarray(u)))
    return Trajectory(xs, us)


def eval_cost(game: DynamicGame, agent: int, u) -> float:
    if not 0 <= agent < game.dims.num_agents:
        raise GameError(f"agent index {agent} out of range")
    u = _check_u(game, u)
    J, _ = oracle_for(game).values(u, game.x0, game.aux)
    return float(J[agent])


def eval_costs(game: DynamicGame, u) -> np.ndarray:
    J, _ = oracle_for(game).values(_check_u(game, u), game.x0, game.aux)
    return np.asarray(J)


def eval_constraints(game: DynamicGame, u) -> np.ndarray:
    u = _check_u(game, u)
    _, C = oracle_for(game).values(u, game.x0, game.aux)
    C = np.asarray(C)
    if C.shape != (game.dims.num_constraints,):
        raise GameError(
            f"constraint map returned {C.shape[0]} entries, dims say {game.dims.num_constraints}"
        )
    return C


def eval_derivatives(game: DynamicGame, u, lam, hessian_mode: str = "exact") -> DerivativeBundle:
    """All first/second derivative blocks at ``(u, lam)``.

    ``hessian_mode="gauss_newton"`` replaces L by the curvature of the stage
    terms propagated through first-order trajectory sensitivities.
    """
    u = _check_u(game, u)
    lam = _check_lam(game, lam)
    oracle = oracle_for(game)
    J, C, h, G, F, L, dJ = oracle.full(u, lam, game.x0, game.aux)
    if hessian_mode == "gauss_newton":
        L = oracle.gauss_newton(u, lam, game.x0, game.aux)
    elif hessian_mode != "exact":
        raise GameError(f"unknown hessian mode {hessian_mode!r}")
    return DerivativeBundle(
        game.dims,
        np.asarray(J),
        np.asarray(C),
        np.asarray(h),
        np.asarray(G).reshape(game.dims.num_constraints, game.dims.num_decision),
        np.asarray(F),
        np.asarray(L),
        np.asarray(dJ),
    )


def eval_first_order(game: DynamicGame, u, lam) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(stacked Lagrangian gradient, constraint values, costs) without second derivatives."""
    F, C, J = oracle_for(game).first_order(u, lam, game.x0, game.aux)
    return np.asarray(F), np.asarray(C), np.asarray(J)
