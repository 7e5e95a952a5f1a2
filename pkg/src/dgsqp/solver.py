"""DG-SQP: sequential quadratic programming for open-loop generalized Nash equilibria.

Each iteration linearizes every agent's KKT conditions around the current
primal-dual pair, convexifies the row-blocked Lagrangian Hessian by symmetric
PSD projection plus a decaying multiple of the identity, and solves one convex
QP for the joint primal step and the new shared multipliers. Steps are
globalized with a watchdog line search on the merit function

    phi(u, lam, s) = 1/2 ||grad L(u, lam)||^2 + mu ||C(u) - s||_1,

which allows a few relaxed full steps (d-steps) before a sufficient-decrease
step (m-step) is enforced.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from dgsqp.game import DerivativeBundle, DynamicGame, eval_derivatives, eval_first_order
from dgsqp.qp import QpSolution, QpSubproblem, project_psd, solve_qp, solve_qp_elastic

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger(__name__)

STATUSES = ("converged", "max_iterations", "line_search_failure", "qp_failure")
# steps after which a point satisfying the decrease condition has been found
DECAY_KINDS = ("m", "watchdog_reset")
TRACE_COLUMNS = ("iter", "merit", "stat_res", "feas_res", "comp_res", "alpha", "eps", "step_kind")


@dataclass(frozen=True)
class SolverConfig:
    eps0: float = 10.0
    eta: float = 0.95
    zeta: float = 1e-2
    rho: float = 0.5
    conv_tol: tuple[float, float, float] = (1e-4, 1e-4, 1e-4)
    max_iter: int = 300
    backtrack: float = 0.5
    max_d_steps: int = 50  # 0 gives a monotone line search
    merit_memory: int = 5  # decrease is measured against the worst of this many checkpoints
    max_trials: int = 20
    mu_min: float = 1e-4
    merit: str = "full"  # or "cost_sum": sum of objectives plus the penalty term
    hessian_mode: str = "exact"
    elastic_penalty: float = 1e6

    def __post_init__(self):
        if self.eps0 < 0:
            raise ValueError("eps0 must be non-negative")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if not 0 < self.zeta < 0.5:
            raise ValueError("zeta must lie in (0, 0.5)")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        tol = tuple(float(t) for t in np.broadcast_to(self.conv_tol, (3,)))
        if min(tol) <= 0:
            raise ValueError("convergence tolerances must be positive")
        object.__setattr__(self, "conv_tol", tol)
        if self.max_iter < 0 or self.max_d_steps < 0 or self.max_trials < 1:
            raise ValueError("iteration budgets must be non-negative")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtracking factor must lie in (0, 1)")
        if self.merit_memory < 1:
            raise ValueError("merit_memory must be at least 1")
        if self.mu_min < 0:
            raise ValueError("mu_min must be non-negative")
        if self.merit not in ("full", "cost_sum"):
            raise ValueError(f"unknown merit {self.merit!r}")
        if self.hessian_mode not in ("exact", "gauss_newton"):
            raise ValueError(f"unknown hessian mode {self.hessian_mode!r}")

    def replace(self, **changes) -> "SolverConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, data: dict) -> "SolverConfig":
        """Build from a nested mapping using the documented config-file keys."""
        flat = {}
        sections = {
            "watchdog": {"max_d_steps": "max_d_steps", "memory": "merit_memory"},
            "linesearch": {"backtrack": "backtrack", "max_trials": "max_trials"},
            "merit": {"mu_min": "mu_min", "kind": "merit"},
            "hessian": {"mode": "hessian_mode"},
        }
        for key, value in data.items():
            if key in sections and isinstance(value, dict):
                for sub, sub_value in value.items():
                    if sub not in sections[key]:
                        raise ValueError(f"unknown solver key {key}.{sub}")
                    flat[sections[key][sub]] = sub_value
            elif key in ("eps0", "eta", "zeta", "rho", "conv_tol", "max_iter", "elastic_penalty"):
                flat[key] = value
            else:
                raise ValueError(f"unknown solver key {key!r}")
        if "conv_tol" in flat:
            flat["conv_tol"] = tuple(np.broadcast_to(np.asarray(flat["conv_tol"], float), (3,)))
        return cls(**flat)

    @classmethod
    def from_toml(cls, path: str | Path) -> "SolverConfig":
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        return cls.from_dict(data.get("solver", data))


@dataclass(frozen=True)
class Residuals:
    stationarity: float
    feasibility: float
    complementarity: float

    def within(self, tol: Sequence[float]) -> bool:
        return (
            self.stationarity <= tol[0]
            and self.feasibility <= tol[1]
            and self.complementarity <= tol[2]
        )


@dataclass(frozen=True)
class SqpIterate:
    u: np.ndarray
    lam: np.ndarray
    s: np.ndarray
    eps: float
    merit: float
    residuals: Residuals


@dataclass
class WatchdogState:
    """Checkpoint bookkeeping for the non-monotone line search.

    Only the last checkpoint is kept for resets; ``history`` holds the
    (gamma, violation) pairs of the most recent checkpoints, which set the
    reference value of the decrease test. Merits are re-evaluated under the
    current penalty parameter.
    """

    checkpoints: list = field(default_factory=list)
    history: list = field(default_factory=list)
    d_count: int = 0
    best_merit: float = math.inf
    at_checkpoint: bool = True

    @property
    def checkpoint(self):
        return self.checkpoints[-1] if self.checkpoints else None

    def reference(self, mu: float) -> float:
        return max(g + mu * v for g, v in self.history)


@dataclass(frozen=True)
class _Checkpoint:
    u: np.ndarray
    lam: np.ndarray
    gamma: float
    violation: float
    step: "_Step"


@dataclass(frozen=True)
class _Step:
    p_u: np.ndarray
    p_lam: np.ndarray
    s: np.ndarray
    p_s: np.ndarray
    mu: float
    slope: float  # directional derivative of the merit along the step
    relaxed: bool


@dataclass
class SolveResult:
    status: str
    u: np.ndarray
    lam: np.ndarray
    iterations: int
    residuals: Residuals
    trace: list[dict]
    eps: float
    mu: float
    wall_time: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def trace_rows(self) -> list[tuple]:
        return [tuple(rec[c] for c in TRACE_COLUMNS) for rec in self.trace]

    def write_trace(self, path: str | Path) -> None:
        write_trace_csv(self.trace, path)


def write_trace_csv(trace: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for rec in trace:
            writer.writerow([rec[c] for c in TRACE_COLUMNS])


# -- building blocks --------------------------------------------------------------


def slack_of(C: np.ndarray) -> np.ndarray:
    return np.minimum(0.0, C)


def init_duals(game: DynamicGame, u0) -> np.ndarray:
    """Least-squares multipliers at u0 clipped to the non-negative orthant."""
    n_c = game.dims.num_constraints
    if n_c == 0:
        return np.zeros(0)
    bundle = eval_derivatives(game, u0, np.zeros(n_c))
    return least_squares_duals(bundle.G, bundle.h)


def least_squares_duals(G: np.ndarray, h: np.ndarray) -> np.ndarray:
    """max(0, lam~) with lam~ the minimum-norm solution of G G' lam = -G h."""
    if G.shape[0] == 0:
        return np.zeros(0)
    lam, *_ = np.linalg.lstsq(G @ G.T, -G @ h, rcond=None)
    return np.maximum(lam, 0.0)


def residuals(F: np.ndarray, C: np.ndarray, lam: np.ndarray) -> Residuals:
    return Residuals(
        float(np.max(np.abs(F), initial=0.0)),
        float(np.max(C, initial=0.0)) if C.size else 0.0,
        float(abs(lam @ C)) if C.size else 0.0,
    )


def check_convergence(res: Residuals, config: SolverConfig) -> bool:
    return res.within(config.conv_tol)


def regularized_hessian(L: np.ndarray, eps: float) -> np.ndarray:
    """B = proj_psd((L + L') / 2) + eps I."""
    return project_psd(0.5 * (L + L.T)) + eps * np.eye(L.shape[0])


def build_subproblem(bundle: DerivativeBundle, eps: float) -> QpSubproblem:
    return QpSubproblem(regularized_hessian(bundle.L, eps), bundle.h, bundle.G, bundle.constraints)


def merit(F: np.ndarray, C: np.ndarray, s: np.ndarray, mu: float) -> float:
    """1/2 ||grad L||^2 + mu ||C - s||_1."""
    return 0.5 * float(F @ F) + mu * float(np.sum(np.abs(C - s)))


def gamma_slope(F: np.ndarray, L: np.ndarray, G: np.ndarray, p_u: np.ndarray, p_lam: np.ndarray) -> float:
    """Derivative of gamma = 1/2 ||grad L||^2 along (p_u, p_lam)."""
    return float(F @ (L @ p_u + G.T @ p_lam))


def directional_derivative(gamma_grad_p: float, mu: float, c_minus_s: np.ndarray) -> float:
    """grad gamma . p - mu ||C - s||_1 (slack direction omitted, as derived)."""
    return gamma_grad_p - mu * float(np.sum(np.abs(c_minus_s)))


def update_mu(gamma_grad_p: float, c_minus_s: np.ndarray, rho: float, mu_min: float, mu_prev: float = 0.0) -> float:
    """Penalty parameter; zero at feasible iterates, otherwise large enough for descent."""
    viol = float(np.sum(np.abs(c_minus_s)))
    if viol == 0.0:
        return 0.0
    return max(mu_min, mu_prev, gamma_grad_p / ((1.0 - rho) * viol))


def _merit_value(config: SolverConfig, F, C, J, s, mu) -> float:
    if config.merit == "cost_sum":
        return float(np.sum(J)) + mu * float(np.sum(np.abs(C - s)))
    return merit(F, C, s, mu)


def _safe_lam(lam: np.ndarray) -> np.ndarray:
    return np.maximum(lam, 0.0)


# -- solver -------------------------------------------------------------------------


class _Solve:
    """Per-call state of one DG-SQP run (the config is never mutated)."""

    def __init__(self, game: DynamicGame, config: SolverConfig, callback=None):
        self.game = game
        self.config = config
        self.callback = callback
        self.trace: list[dict] = []
        self.watchdog = WatchdogState()
        self.eps = config.eps0
        self.mu = 0.0

    # merit along a step from (u, lam) with slack s
    def trial(self, u, lam, step: _Step, alpha: float) -> tuple[float, float, float]:
        """(merit, gamma-part, violation) at u + alpha p_u under ``step.mu``."""
        u_t = u + alpha * step.p_u
        lam_t = _safe_lam(lam + alpha * step.p_lam)
        F, C, J = eval_first_order(self.game, u_t, lam_t)
        s_t = step.s + alpha * step.p_s
        viol = float(np.sum(np.abs(C - s_t)))
        if self.config.merit == "cost_sum":
            head = float(np.sum(J))
        else:
            head = 0.5 * float(F @ F)
        return head + step.mu * viol, head, viol

    def compute_step(self, bundle: DerivativeBundle, lam) -> tuple[_Step | None, QpSolution | None]:
        qp = build_subproblem(bundle, self.eps)
        try:
            sol = solve_qp(qp)
            if sol.status != "solved":
                sol = solve_qp_elastic(qp, self.config.elastic_penalty)
        except Exception as exc:  # numerical breakdown inside the QP
            log.debug("QP failed: %s", exc)
            return None, None
        if sol.status != "solved" or not np.all(np.isfinite(sol.p_u)):
            return None, sol
        C = bundle.constraints
        s = slack_of(C)
        p_lam = sol.d - lam
        p_s = C + bundle.G @ sol.p_u - s
        c_minus_s = C - s
        if self.config.merit == "cost_sum":
            slope_head = float(np.sum(bundle.cost_jacobian, axis=0) @ sol.p_u)
        else:
            slope_head = gamma_slope(bundle.grad_lagrangian, bundle.L, bundle.G, sol.p_u, p_lam)
        mu = update_mu(slope_head, c_minus_s, self.config.rho, self.config.mu_min, self.mu)
        slope = directional_derivative(slope_head, mu, c_minus_s)
        return _Step(sol.p_u, p_lam, s, p_s, mu, slope, sol.relaxed), sol

    def backtrack(self, u, lam, step: _Step, phi0: float, alpha: float) -> tuple[float, float] | None:
        """Largest alpha in the sequence satisfying the sufficient-decrease test."""
        cfg = self.config
        for _ in range(cfg.max_trials):
            phi_t, *_ = self.trial(u, lam, step, alpha)
            if np.isfinite(phi_t) and phi_t <= phi0 + cfg.zeta * alpha * step.slope:
                return alpha, phi_t
            alpha *= cfg.backtrack
        return None

    def line_search(self, u, lam, step: _Step, phi_cur: float, gamma_cur: float, viol_cur: float):
        """Watchdog logic. Returns (u, lam, alpha, kind, merit) or None on failure.

        A full step that passes the decrease test against the reference value
        (the worst merit among recent checkpoints) is an m-step and makes the
        new iterate a checkpoint. Otherwise up to ``max_d_steps`` full steps
        are taken regardless of the merit (d-steps). Then decrease is enforced
        by backtracking from the current point; if that fails, the iterate is
        reset to the last checkpoint and backtracking restarts from there.
        """
        cfg = self.config
        wd = self.watchdog
        if wd.at_checkpoint:
            wd.checkpoints = [_Checkpoint(u, lam, gamma_cur, viol_cur, step)]
            wd.history = (wd.history + [(gamma_cur, viol_cur)])[-cfg.merit_memory:]
            wd.d_count = 0
            wd.at_checkpoint = False
        ref = wd.reference(step.mu)

        phi1, *_ = self.trial(u, lam, step, 1.0)
        if not step.relaxed and np.isfinite(phi1) and phi1 <= ref + cfg.zeta * step.slope:
            return self._accept(u + step.p_u, lam + step.p_lam, 1.0, "m", phi1)
        if wd.d_count < cfg.max_d_steps and np.isfinite(phi1):
            wd.d_count += 1
            return u + step.p_u, _safe_lam(lam + step.p_lam), 1.0, "d", phi1

        found = self.backtrack(u, lam, step, ref, cfg.backtrack)
        if found is not None:
            alpha, phi_t = found
            return self._accept(u + alpha * step.p_u, lam + alpha * step.p_lam, alpha, "m", phi_t)
        ck = wd.checkpoint
        if ck.u is u:
            return None
        # the relaxed steps led nowhere: return to the checkpoint
        ck_step = ck.step
        self.mu = ck_step.mu
        phi_ck = ck.gamma + ck_step.mu * ck.violation
        found = self.backtrack(ck.u, ck.lam, ck_step, min(phi_ck, wd.reference(ck_step.mu)), cfg.backtrack)
        if found is None:
            return None
        alpha, phi_t = found
        return self._accept(ck.u + alpha * ck_step.p_u, ck.lam + alpha * ck_step.p_lam, alpha, "watchdog_reset", phi_t)

    def _accept(self, u, lam, alpha, kind, phi):
        wd = self.watchdog
        wd.at_checkpoint = True
        wd.best_merit = min(wd.best_merit, phi)
        return u, _safe_lam(lam), alpha, kind, phi

    def record(self, it, phi, res: Residuals, alpha, kind, u, lam, slope=0.0, merit_next=math.nan):
        rec = {
            "iter": it,
            "merit": phi,
            "stat_res": res.stationarity,
            "feas_res": res.feasibility,
            "comp_res": res.complementarity,
            "alpha": alpha,
            "eps": self.eps,
            "step_kind": kind,
            "slope": slope,
            "merit_next": merit_next,
        }
        self.trace.append(rec)
        if self.callback is not None:
            self.callback(rec, u, lam)

    def run(self, u0, lam0) -> SolveResult:
        cfg = self.config
        t0 = time.perf_counter()
        u = np.array(u0, dtype=float)
        lam = lam0
        status = "max_iterations"
        res = Residuals(math.inf, math.inf, math.inf)
        it = 0
        while True:
            bundle = eval_derivatives(self.game, u, lam, cfg.hessian_mode)
            F, C = bundle.grad_lagrangian, bundle.constraints
            if not (np.all(np.isfinite(F)) and np.all(np.isfinite(C))):
                status = "line_search_failure"
                break
            res = residuals(F, C, lam)
            if check_convergence(res, cfg):
                phi = _merit_value(cfg, F, C, bundle.costs, slack_of(C), self.mu)
                self.record(it, phi, res, 0.0, "converged", u, lam)
                status = "converged"
                break
            if it >= cfg.max_iter:
                status = "max_iterations"
                break
            step, _ = self.compute_step(bundle, lam)
            if step is None:
                status = "qp_failure"
                break
            self.mu = step.mu
            s = slack_of(C)
            viol = float(np.sum(np.abs(C - s)))
            head = float(np.sum(bundle.costs)) if cfg.merit == "cost_sum" else 0.5 * float(F @ F)
            phi = head + step.mu * viol
            outcome = self.line_search(u, lam, step, phi, head, viol)
            it += 1
            if outcome is None:
                self.record(it, phi, res, 0.0, "failed", u, lam)
                status = "line_search_failure"
                break
            u, lam, alpha, kind, phi_next = outcome
            self.record(it, phi, res, alpha, kind, u, lam, step.slope, phi_next)
            if kind in DECAY_KINDS:
                self.eps *= cfg.eta
        return SolveResult(
            status, u, lam, it, res, self.trace, self.eps, self.mu, time.perf_counter() - t0
        )


def solve(game: DynamicGame, u0, config: SolverConfig | None = None, lam0=None, callback=None) -> SolveResult:
    """Run DG-SQP from the joint input sequence ``u0``.

    ``lam0`` defaults to the clipped least-squares multipliers at ``u0``.
    ``callback(record, u, lam)`` receives every trace record together with
    the iterate it produced.
    """
    config = config or SolverConfig()
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != (game.dims.num_decision,):
        raise ValueError(f"u0 has shape {u0.shape}, expected ({game.dims.num_decision},)")
    lam0 = init_duals(game, u0) if lam0 is None else np.asarray(lam0, dtype=float)
    return _Solve(game, config, callback).run(u0, lam0)
