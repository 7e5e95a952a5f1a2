"""Finite-difference audit of the derivative oracles.

Cost gradients and constraint Jacobians are compared with central differences
of the cost and constraint values. Lagrangian Hessian blocks are compared with
central differences of the (separately checked) Lagrangian gradients. All
perturbed evaluations of one iterate run inside a single compiled call; a
sequential map compiles much faster than vmap here, and compile time
dominates the audit.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import numpy as np

from dgsqp.game import DynamicGame, eval_derivatives, oracle_for
from dgsqp.racing.games import GameVariant, RacingWeights, build_game
from dgsqp.racing.sampling import SamplingSpec, sample_initial_conditions
from dgsqp.track import ParametricTrack, bundled_track
from dgsqp.vehicle import VehicleParams

log = logging.getLogger(__name__)

FD_STEP = 1e-5
REL_TOL = 1e-4
SCALE_FLOOR = 1e-6  # blocks smaller than this are compared in absolute terms
# each racing family exercises two of the four vehicle models
FAMILIES = {
    "exact_kinematic": (GameVariant("kinematic", "exact"), "kinematic_frenet"),
    "exact_dynamic": (GameVariant("dynamic", "exact"), "dynamic_frenet"),
    "approximate_kinematic": (GameVariant("kinematic", "approximate"), "kinematic_inertial"),
    "approximate_dynamic": (GameVariant("dynamic", "approximate"), "dynamic_inertial"),
}


def block_error(analytic: np.ndarray, reference: np.ndarray) -> float:
    """max |a - b| / max(max |b|, SCALE_FLOOR)."""
    if analytic.size == 0:
        return 0.0
    scale = max(float(np.max(np.abs(reference))), SCALE_FLOOR)
    return float(np.max(np.abs(analytic - reference))) / scale


@functools.lru_cache(maxsize=None)
def _probe(oracle, step: float):
    def probe(u, lam, lams, x0, aux):
        n = u.shape[0]
        E = step * jnp.eye(n)
        U = jnp.concatenate([u + E, u - E])
        J, C = jax.lax.map(lambda v: oracle.values(v, x0, aux), U)
        # perturbed gradients at lam, then unperturbed gradients at each of lams
        V = jnp.concatenate([U, jnp.broadcast_to(u, (lams.shape[0], n))])
        Ls = jnp.concatenate([jnp.broadcast_to(lam, (2 * n, lam.shape[0])), lams])
        F = jax.lax.map(lambda vl: oracle.pseudo_grad(vl[0], vl[1], x0, aux), (V, Ls))
        d = lambda Y: ((Y[:n] - Y[n:]) / (2 * step)).T  # noqa: E731
        return d(J), d(C), d(F[: 2 * n]), F[2 * n:]

    return jax.jit(probe)


def _run_probe(game: DynamicGame, u, lam, lams, step: float):
    probe = _probe(oracle_for(game), step)
    out = probe(jnp.asarray(u, float), jnp.asarray(lam, float), jnp.asarray(lams, float), game.x0, game.aux)
    return tuple(np.asarray(a) for a in out)


def finite_difference_bundle(game: DynamicGame, u, lam, step: float = FD_STEP) -> dict[str, np.ndarray]:
    """Central-difference cost Jacobian, constraint Jacobian and Lagrangian Hessian."""
    J, C, L, _ = _run_probe(game, u, lam, np.zeros((0, game.dims.num_constraints)), step)
    return {"cost_jacobian": J, "G": C, "L": L}


@dataclass
class FamilyReport:
    family: str
    model: str
    iterates: int
    max_error: dict[str, float] = field(default_factory=dict)
    identity_error: float = 0.0  # grad L = h + G' lam, checked for several lam

    @property
    def worst(self) -> float:
        return max(self.max_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= REL_TOL and self.identity_error <= 1e-10


def check_iterate(game: DynamicGame, u, lam, rng: np.random.Generator | None = None) -> tuple[dict[str, float], float]:
    """Per-kind worst block errors at one iterate, plus the gradient identity error."""
    b = eval_derivatives(game, u, lam)
    dims = game.dims
    rng = rng or np.random.default_rng(0)
    lams = rng.uniform(0.0, 10.0, (10, dims.num_constraints))
    fd_J, fd_G, fd_L, F_id = _run_probe(game, u, lam, lams, FD_STEP)
    err = {"cost_grad": 0.0, "constraint_jac": 0.0, "hessian": 0.0}
    for i in range(dims.num_agents):
        si = dims.agent_slice(i)
        err["cost_grad"] = max(err["cost_grad"], block_error(b.cost_grad(i), fd_J[i, si]))
        err["constraint_jac"] = max(err["constraint_jac"], block_error(b.constraint_jac(i), fd_G[:, si]))
        for j in range(dims.num_agents):
            err["hessian"] = max(err["hessian"], block_error(b.hessian_block(i, j), fd_L[si, dims.agent_slice(j)]))
    # grad L^i = grad J^i + G' lam on agent i's block, for arbitrary lam
    expect = b.h[None, :] + lams @ b.G
    scale = np.maximum(1.0, np.max(np.abs(expect), axis=1, initial=0.0))
    ident = float(np.max(np.max(np.abs(F_id - expect), axis=1, initial=0.0) / scale, initial=0.0))
    return err, ident


def random_iterate(game: DynamicGame, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Inputs inside the boxes (arcspeeds in a plausible band) and sparse positive duals."""
    lo, hi = game.decision_bounds()
    lo, hi = lo.copy(), hi.copy()
    wide = ~np.isfinite(lo) | ~np.isfinite(hi) | (hi - lo > 5.0)
    lo[wide], hi[wide] = 0.5, 2.5
    u = rng.uniform(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo))
    lam = rng.uniform(0.0, 5.0, game.dims.num_constraints) * (rng.random(game.dims.num_constraints) < 0.3)
    return u, lam


def validate_family(
    name: str,
    count: int = 100,
    seed: int = 0,
    horizon: int = 4,
    track: ParametricTrack | None = None,
    params: VehicleParams | None = None,
) -> FamilyReport:
    variant, model = FAMILIES[name]
    track = track or bundled_track("l_track")
    params = params or VehicleParams()
    rng = np.random.default_rng(seed)
    report = FamilyReport(name, model, count)
    if count <= 0:
        return report
    ics = sample_initial_conditions(track, SamplingSpec(), min(count, 10), seed, model=variant.model)
    games = [build_game(variant, track, (params, params), RacingWeights(), x0, horizon) for x0 in ics]
    for k in range(count):
        game = games[k % len(games)]
        u, lam = random_iterate(game, rng)
        err, ident = check_iterate(game, u, lam, rng)
        for key, value in err.items():
            report.max_error[key] = max(report.max_error.get(key, 0.0), value)
        report.identity_error = max(report.identity_error, ident)
    log.info("%s: worst relative error %.2e", name, report.worst)
    return report


def validate_derivatives(count: int = 100, seed: int = 0, horizon: int = 4, families=tuple(FAMILIES)) -> list[FamilyReport]:
    return [validate_family(name, count, seed, horizon) for name in families]
