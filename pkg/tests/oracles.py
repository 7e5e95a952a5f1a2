"""Independent reference computations used by the test-suite."""

import itertools

import numpy as np


def enumerate_active_sets(B, h, G, c, tol=1e-9):
    """Solve a small strictly convex QP by trying every active set.

    Returns (x, d) for the unique subset whose equality-constrained solution
    is primal feasible with non-negative multipliers.
    """
    n, m = h.size, c.size
    best = None
    for r in range(m + 1):
        for subset in itertools.combinations(range(m), r):
            idx = list(subset)
            Ga = G[idx]
            if r and np.linalg.matrix_rank(Ga) < r:
                continue
            K = np.block([[B, Ga.T], [Ga, np.zeros((r, r))]])
            sol = np.linalg.solve(K, -np.concatenate([h, c[idx]]))
            x = sol[:n]
            d = np.zeros(m)
            d[idx] = sol[n:]
            if np.all(c + G @ x <= tol) and np.all(d >= -tol):
                if best is None:
                    best = (x, d)
    return best


def central_difference(fn, x, step=1e-5):
    """Jacobian of fn at x by central differences, shape (out, len(x))."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        cols.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2 * step))
    return np.stack(cols, axis=-1)


def random_convex_qp(rng, n_max=6, m_max=4):
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(0, m_max + 1))
    A = rng.normal(size=(n, n))
    B = A @ A.T + 0.5 * np.eye(n)
    h = rng.normal(size=n)
    G = rng.normal(size=(m, n))
    # feasible by construction: some random point satisfies every row
    x_feas = rng.normal(size=n)
    c = -G @ x_feas - rng.uniform(0.0, 1.0, size=m)
    return B, h, G, c


def rk4_order(ode, x, u, dt, substeps=10):
    """Measured order of the one-step RK4 error when dt is halved.

    The reference at each step size is RK4 with ``substeps`` finer steps.
    """
    from dgsqp.vehicle import rk4

    errs = []
    for h in (dt, dt / 2):
        coarse = np.asarray(rk4(ode, x, u, h, 1))
        fine = np.asarray(rk4(ode, x, u, h, substeps))
        errs.append(np.max(np.abs(coarse - fine)))
    return float(np.log2(errs[0] / errs[1])), errs
