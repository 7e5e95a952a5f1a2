"""Convex QP subproblem: PSD projection, dense interior point, saddle-point solves.

The QP solved at every SQP iteration is::

    minimize    1/2 p' B p + h' p
    subject to  c + G p <= 0

with ``B`` positive semidefinite. `solve_qp` uses a dense primal-dual
interior-point method with Mehrotra predictor-corrector steps, followed by an
active-set polish that re-solves the equality-constrained system on the
identified active set.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

log = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-9
PSD_EIG_TOL = 1e-10
INEXACT_TOL = 1e-6  # relative KKT error accepted when the interior point stalls


class QpError(ValueError):
    """Contract violation (asymmetric input, rank deficiency, singular system)."""


@dataclass(frozen=True)
class QpSubproblem:
    B: np.ndarray
    h: np.ndarray
    G: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        h = np.atleast_1d(np.asarray(self.h, dtype=float))
        c = np.atleast_1d(np.asarray(self.c, dtype=float)).reshape(-1)
        G = np.asarray(self.G, dtype=float).reshape(c.size, h.size)
        if B.shape != (h.size, h.size):
            raise QpError(f"B has shape {B.shape}, expected {(h.size, h.size)}")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "c", c)

    @property
    def num_vars(self) -> int:
        return self.h.size

    @property
    def num_constraints(self) -> int:
        return self.c.size


@dataclass(frozen=True)
class QpSolution:
    p_u: np.ndarray
    d: np.ndarray
    status: str  # solved | infeasible | max_iterations
    iterations: int = 0
    relaxed: bool = False

    def kkt_residuals(self, qp: QpSubproblem) -> dict[str, float]:
        slack = qp.c + qp.G @ self.p_u
        return {
            "stationarity": float(np.max(np.abs(qp.B @ self.p_u + qp.h + qp.G.T @ self.d), initial=0.0)),
            "feasibility": float(np.max(slack, initial=0.0)),
            "dual": float(-np.min(self.d, initial=0.0)),
            "complementarity": float(abs(self.d @ slack)),
        }


def project_psd(X: np.ndarray) -> np.ndarray:
    """Frobenius-nearest positive semidefinite matrix: sum max(0, s_i) v_i v_i'."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise QpError("project_psd expects a square matrix")
    if np.max(np.abs(X - X.T), initial=0.0) > SYMMETRY_TOL:
        raise QpError("project_psd expects a symmetric matrix")
    s, V = np.linalg.eigh(0.5 * (X + X.T))
    s = np.where(s > PSD_EIG_TOL, s, 0.0)
    Y = (V * s) @ V.T
    return 0.5 * (Y + Y.T)


def _saddle_solve(K: np.ndarray, rhs: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    try:
        sol = scipy.linalg.solve(K, rhs)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise QpError(f"singular saddle-point system: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise QpError("singular saddle-point system")
    return sol[:n], sol[n:]


def _check_rank(Gbar: np.ndarray):
    if Gbar.shape[0] and np.linalg.matrix_rank(Gbar) < Gbar.shape[0]:
        raise QpError("constraint Jacobian is rank deficient")


def solve_eqp(B, h, Gbar, cbar, lam=None) -> tuple[np.ndarray, np.ndarray]:
    """Solve [[B, G'], [G, 0]] [p_u; p_lam] = -[h + G' lam; c].

    With ``lam`` omitted (zero) the second block is the multiplier of the
    equality-constrained QP itself.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    h = np.atleast_1d(np.asarray(h, dtype=float))
    n = h.size
    cbar = np.atleast_1d(np.asarray(cbar, dtype=float)).reshape(-1)
    Gbar = np.asarray(Gbar, dtype=float).reshape(cbar.size, n)
    lam = np.zeros(cbar.size) if lam is None else np.asarray(lam, dtype=float)
    _check_rank(Gbar)
    k = cbar.size
    K = np.block([[B, Gbar.T], [Gbar, np.zeros((k, k))]])
    rhs = -np.concatenate([h + Gbar.T @ lam, cbar])
    return _saddle_solve(K, rhs, n)


def newton_step(L, h, Gbar, cbar, lam) -> tuple[np.ndarray, np.ndarray]:
    """Newton step on the stacked KKT root-finding problem (L need not be symmetric)."""
    L = np.atleast_2d(np.asarray(L, dtype=float))
    h = np.atleast_1d(np.asarray(h, dtype=float))
    n = h.size
    cbar = np.atleast_1d(np.asarray(cbar, dtype=float)).reshape(-1)
    Gbar = np.asarray(Gbar, dtype=float).reshape(cbar.size, n)
    lam = np.asarray(lam, dtype=float).reshape(cbar.size)
    k = cbar.size
    K = np.block([[L, Gbar.T], [Gbar, np.zeros((k, k))]])
    if np.linalg.cond(K) > 1e14:
        raise QpError("singular Newton system")
    rhs = -np.concatenate([h + Gbar.T @ lam, cbar])
    return _saddle_solve(K, rhs, n)


# -- interior point -----------------------------------------------------------


def _factor(M: np.ndarray):
    reg = 0.0
    scale = max(1.0, float(np.max(np.abs(np.diag(M)), initial=1.0)))
    for _ in range(8):
        try:
            return scipy.linalg.cho_factor(M + reg * np.eye(M.shape[0]), check_finite=False)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            reg = scale * 1e-14 if reg == 0.0 else reg * 100
    raise np.linalg.LinAlgError("normal matrix not positive definite")


def _interior_point(qp: QpSubproblem, tol: float, max_iter: int):
    B, h, G = qp.B, qp.h, qp.G
    b = -qp.c
    n, m = qp.num_vars, qp.num_constraints
    if m == 0:
        try:
            x = -scipy.linalg.solve(B, h, assume_a="sym")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            return np.zeros(n), np.zeros(0), "max_iterations", 0
        if not np.all(np.isfinite(x)):
            return np.zeros(n), np.zeros(0), "max_iterations", 0
        return x, np.zeros(0), "solved", 1

    hscale = 1.0 + np.max(np.abs(h), initial=0.0)
    bscale = 1.0 + np.max(np.abs(b), initial=0.0)
    x = np.zeros(n)
    z = np.maximum(b - G @ x, 1.0)
    d = np.ones(m)
    best, best_err = None, np.inf
    for it in range(1, max_iter + 1):
        r_d = B @ x + h + G.T @ d
        r_p = G @ x + z - b
        mu = z @ d / m
        err = max(
            np.max(np.abs(r_d)) / hscale,
            np.max(np.abs(r_p)) / bscale,
            mu * 1e2 / max(1.0, float(np.max(d))),
        )
        if err <= tol:
            return x, d, "solved", it
        if err < best_err:
            best, best_err = (x.copy(), d.copy()), err
        dnorm = np.max(d)
        if dnorm > 1e10:
            y = d / dnorm
            if b @ y < -1e-8 and np.max(np.abs(G.T @ y)) <= 1e-6:
                return x, d, "infeasible", it
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(d))):
            break

        with np.errstate(over="ignore"):
            normal = B + (G.T * (d / z)) @ G
        if not np.all(np.isfinite(normal)):  # a slack collapsed to its floor
            break
        try:
            fac = _factor(normal)
        except np.linalg.LinAlgError:
            break

        def direction(r_c):
            rhs = -r_d + G.T @ ((r_c - d * r_p) / z)
            dx = scipy.linalg.cho_solve(fac, rhs, check_finite=False)
            dz = -r_p - G @ dx
            dd = -(r_c + d * dz) / z
            return dx, dz, dd

        def max_step(v, dv):
            neg = dv < 0
            with np.errstate(over="ignore"):
                return min(1.0, float(np.min(-v[neg] / dv[neg], initial=np.inf)))

        # predictor (affine scaling)
        dx, dz, dd = direction(z * d)
        a_aff = min(max_step(z, dz), max_step(d, dd))
        mu_aff = (z + a_aff * dz) @ (d + a_aff * dd) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        # corrector
        dx, dz, dd = direction(z * d + dz * dd - sigma * mu)
        alpha = 0.99 * min(max_step(z, dz), max_step(d, dd))
        x = x + alpha * dx
        z = np.maximum(z + alpha * dz, 1e-300)
        d = np.maximum(d + alpha * dd, 1e-300)
    if best is not None and best_err <= INEXACT_TOL:
        # stalled on conditioning, not on the problem
        return best[0], best[1], "inexact", max_iter
    return x, d, "max_iterations", max_iter


def _polish(qp: QpSubproblem, x: np.ndarray, d: np.ndarray):
    """Re-solve on the identified active set; keep the result only if it is a KKT point."""
    slack = -(qp.c + qp.G @ x)
    active = d > slack
    Ga = qp.G[active]
    n, k = qp.num_vars, int(active.sum())
    K = np.block([[qp.B, Ga.T], [Ga, np.zeros((k, k))]])
    rhs = -np.concatenate([qp.h, qp.c[active]])
    try:
        with warnings.catch_warnings():
            # degenerate active sets are caught by the KKT checks below
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            sol = scipy.linalg.solve(K, rhs)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        return None
    if not np.all(np.isfinite(sol)):
        return None
    xp = sol[:n]
    dp = np.zeros_like(d)
    dp[active] = sol[n:]
    scale = 1.0 + np.max(np.abs(qp.c), initial=0.0)
    if np.min(dp, initial=0.0) < -1e-10 * (1 + np.max(np.abs(d), initial=0.0)):
        return None
    if np.max(qp.c + qp.G @ xp, initial=0.0) > 1e-10 * scale:
        return None
    resid = np.max(np.abs(qp.B @ xp + qp.h + qp.G.T @ dp), initial=0.0)
    if resid > 1e-8 * (1.0 + np.max(np.abs(qp.h), initial=0.0)):
        return None
    return xp, np.maximum(dp, 0.0)


def solve_qp(qp: QpSubproblem, tol: float = 1e-10, max_iter: int = 100, polish: bool = True) -> QpSolution:
    """Primal step and multipliers of ``min 1/2 p'Bp + h'p  s.t.  c + Gp <= 0``."""
    x, d, status, iters = _interior_point(qp, tol, max_iter)
    if status in ("solved", "inexact") and polish and qp.num_constraints:
        refined = _polish(qp, x, d)
        if refined is not None:
            x, d = refined
            status = "solved"
    if status == "inexact":
        log.debug("QP solved to reduced accuracy after %d iterations", iters)
        status = "solved"
    return QpSolution(x, d, status, iters)


def solve_qp_elastic(qp: QpSubproblem, penalty: float = 1e6, **kwargs) -> QpSolution:
    """Elastic relaxation ``c + Gp <= sigma``, ``sigma >= 0``, with linear penalty on sigma.

    Always feasible; the returned solution is flagged ``relaxed``.
    """
    n, m = qp.num_vars, qp.num_constraints
    B = np.zeros((n + 1, n + 1))
    B[:n, :n] = qp.B
    h = np.concatenate([qp.h, [penalty]])
    G = np.zeros((m + 1, n + 1))
    G[:m, :n] = qp.G
    G[:m, n] = -1.0
    G[m, n] = -1.0
    c = np.concatenate([qp.c, [0.0]])
    sol = solve_qp(QpSubproblem(B, h, G, c), **kwargs)
    status = "solved" if sol.status == "solved" else sol.status
    return QpSolution(sol.p_u[:n], sol.d[:m], status, sol.iterations, relaxed=True)
