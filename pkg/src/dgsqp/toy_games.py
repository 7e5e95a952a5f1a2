"""Small analytic games with known equilibria, used for solver verification.

``lq_game`` is a two-agent game of 1-D double integrators with quadratic,
non-symmetric coupling, so it is not a potential game. ``potential_game`` has
every agent minimizing one shared objective and optionally a shared linear
constraint.
"""

from __future__ import annotations

import functools

import jax.numpy as jnp
import numpy as np

from dgsqp.game import DynamicGame, GameDimensions

DT = 0.1


def double_integrator(x, u):
    """Joint step of independent 1-D double integrators; x = (p1, v1, p2, v2, ...)."""
    p, v = x[0::2], x[1::2]
    p_next = p + DT * v + 0.5 * DT**2 * u
    v_next = v + DT * u
    return jnp.stack([p_next, v_next], axis=1).reshape(-1)


@functools.lru_cache(maxsize=None)
def _lq_structure(horizon: int, q: float, r: float, c12: float, c21: float):
    def objectives(xs, us, aux):
        p1, p2 = xs[1:, 0], xs[1:, 2]
        target1, target2 = aux[0], aux[1]
        J1 = q * jnp.sum((p1 - target1) ** 2) + r * jnp.sum(us[:, 0] ** 2) + c12 * jnp.sum(p1 * p2)
        J2 = q * jnp.sum((p2 - target2) ** 2) + r * jnp.sum(us[:, 1] ** 2) + c21 * jnp.sum((p2 - p1) ** 2)
        return jnp.stack([J1, J2])

    def constraints(xs, us, aux):
        return jnp.zeros(0)

    dims = GameDimensions(2, horizon, (2, 2), (1, 1), 0)
    return dims, double_integrator, objectives, constraints


def lq_game(
    horizon: int = 5,
    x0=(0.0, 0.5, 0.3, -0.2),
    targets=(1.0, -1.0),
    q: float = 100.0,
    r: float = 10.0,
    c12: float = 40.0,
    c21: float = 20.0,
) -> DynamicGame:
    """Unconstrained two-agent linear-quadratic game."""
    dims, dyn, obj, con = _lq_structure(horizon, q, r, c12, c21)
    big = np.full(2, np.inf)
    return DynamicGame(dims, np.asarray(x0, float), dyn, obj, con, -big, big, np.asarray(targets, float), name="lq")


@functools.lru_cache(maxsize=None)
def _potential_structure(horizon: int, constrained: bool, q: float, r: float, coupling: float):
    def objectives(xs, us, aux):
        p1, p2 = xs[1:, 0], xs[1:, 2]
        phi = (
            q * jnp.sum((p1 - aux[0]) ** 2 + (p2 - aux[1]) ** 2)
            + r * jnp.sum(us**2)
            + coupling * jnp.sum((p1 - p2) ** 2)
        )
        return jnp.stack([phi, phi])

    def constraints(xs, us, aux):
        if not constrained:
            return jnp.zeros(0)
        # terminal position caps, one per agent
        return jnp.stack([xs[-1, 0] - aux[2], xs[-1, 2] - aux[3]])

    dims = GameDimensions(2, horizon, (2, 2), (1, 1), 2 if constrained else 0)
    return dims, double_integrator, objectives, constraints


def potential_game(
    horizon: int = 5,
    x0=(0.0, 0.5, 0.3, -0.2),
    targets=(1.0, 0.8),
    caps=(0.2, 10.0),
    constrained: bool = True,
    q: float = 10.0,
    r: float = 1.0,
    coupling: float = 1.0,
) -> DynamicGame:
    """Shared-objective game; the first terminal cap is active at the solution."""
    dims, dyn, obj, con = _potential_structure(horizon, constrained, q, r, coupling)
    big = np.full(2, np.inf)
    aux = np.concatenate([np.asarray(targets, float), np.asarray(caps, float)])
    return DynamicGame(dims, np.asarray(x0, float), dyn, obj, con, -big, big, aux, name="potential")
