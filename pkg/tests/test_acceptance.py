"""The twelve acceptance criteria, one test each.

Every test records a PASS/FAIL line (shown in the terminal summary) before
asserting. The Monte-Carlo criteria share their studies through module fixtures.
"""

import functools
import time

import jax.numpy as jnp
import numpy as np
import pytest

from acceptance_log import report
from dgsqp.bench.scenario import bundled_scenario
from dgsqp.bench.studies import run_ablation, run_mse_comparison, run_regularization_grid, run_success_study, success_count
from dgsqp.bench.validate import REL_TOL, validate_derivatives
from dgsqp.game import eval_derivatives
from dgsqp.qp import QpSubproblem, newton_step, project_psd, solve_qp
from dgsqp.racing.games import lag_error
from dgsqp.solver import SolverConfig, build_subproblem, solve
from dgsqp.toy_games import lq_game, potential_game
from dgsqp.track import ParametricTrack, Segment, frenet_pose, frenet_to_inertial
from dgsqp.vehicle import ODES
from oracles import enumerate_active_sets, random_convex_qp, rk4_order

pytestmark = pytest.mark.slow

N_STUDY = 15


@pytest.fixture(scope="module")
def scenario1():
    return bundled_scenario("scenario1")


@pytest.fixture(scope="module")
def success_studies(scenario1):
    approx = run_success_study(scenario1, 50, [N_STUDY], formulation="approximate")
    exact = run_success_study(scenario1, 50, [N_STUDY], formulation="exact")
    return approx, exact


def test_c01_qp_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    solved = True
    for _ in range(50):
        B, h, G, c = random_convex_qp(rng)
        sol = solve_qp(QpSubproblem(B, h, G, c))
        x_ref, d_ref = enumerate_active_sets(B, h, G, c)
        solved &= sol.status == "solved"
        worst = max(worst, np.max(np.abs(sol.p_u - x_ref)), np.max(np.abs(sol.d - d_ref), initial=0.0))
    dt = time.perf_counter() - t0
    ok = solved and worst <= 1e-8 and dt < 5
    assert report(1, "QP oracle equivalence", ok, f"50 QPs, max error {worst:.1e}, {dt:.2f} s")


def test_c02_psd_projection():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    idem = min_eig = 0.0
    optimal = True
    for _ in range(20):
        A = rng.normal(size=(6, 6))
        X = 0.5 * (A + A.T)
        Y = project_psd(X)
        idem = max(idem, np.max(np.abs(project_psd(Y) - Y)))
        min_eig = min(min_eig, np.linalg.eigvalsh(Y).min())
        best = np.linalg.norm(X - Y)
        for _ in range(1000):
            C = rng.normal(size=(6, 6))
            optimal &= np.linalg.norm(X - C @ C.T * rng.uniform(0, 1)) >= best - 1e-12
    dt = time.perf_counter() - t0
    ok = idem <= 1e-12 and min_eig >= -1e-10 and optimal and dt < 5
    detail = f"idempotence {idem:.1e}, min eigenvalue {min_eig:.1e}, optimal vs 20000 candidates: {optimal}, {dt:.2f} s"
    assert report(2, "PSD projection", ok, detail)


def test_c03_derivative_validation():
    t0 = time.perf_counter()
    reports = validate_derivatives(count=100, seed=0, horizon=4)
    dt = time.perf_counter() - t0
    worst = max(r.worst for r in reports)
    models = sorted(r.model for r in reports)
    ok = all(r.passed for r in reports) and len(models) == 4 and dt < 120
    detail = f"{len(reports)} families x 100 iterates ({', '.join(models)}), worst rel error {worst:.1e} (tol {REL_TOL:g}), {dt:.0f} s"
    assert report(3, "derivative validation", ok, detail)


def test_c04_lq_game_oracle():
    t0 = time.perf_counter()
    g = lq_game()
    z = np.zeros(g.dims.num_decision)
    b = eval_derivatives(g, z, np.zeros(0))
    u_star = np.linalg.solve(b.L, -b.grad_lagrangian)
    errors = [np.linalg.norm(u_star)]
    res = solve(g, z, SolverConfig(conv_tol=1e-12), callback=lambda rec, u, lam: errors.append(np.linalg.norm(u - u_star)))
    err = np.max(np.abs(res.u - u_star))
    inside = [k for k, e in enumerate(errors) if e < 1e-2]
    ratios = [errors[k + 1] / errors[k] for k in inside[:-1] if errors[k] > 1e-11]
    rate = max(ratios) if ratios else float("nan")
    dt = time.perf_counter() - t0
    ok = res.converged and err <= 1e-6 and ratios != [] and rate <= 0.9 and dt < 10
    assert report(4, "LQ game oracle", ok, f"error {err:.1e}, worst local ratio {rate:.2f}, {dt:.2f} s")


def test_c05_potential_game_step():
    t0 = time.perf_counter()
    g = potential_game()
    u = np.zeros(g.dims.num_decision)
    lam = np.zeros(g.dims.num_constraints)
    b = eval_derivatives(g, u, lam)
    pd = np.linalg.eigvalsh(0.5 * (b.L + b.L.T)).min() > 0
    sol = solve_qp(build_subproblem(b, 0.0))
    active = sol.d > 1e-9
    p, dl = newton_step(b.L, b.h, b.G[active], b.constraints[active], lam[active])
    err = max(np.max(np.abs(sol.p_u - p)), np.max(np.abs(sol.d[active] - lam[active] - dl), initial=0.0))
    dt = time.perf_counter() - t0
    ok = pd and err <= 1e-9 and dt < 5
    assert report(5, "potential-game step equivalence", ok, f"{int(active.sum())} active, step error {err:.1e}, {dt:.2f} s")


def test_c06_scenario1_success_rate(success_studies):
    approx, _ = success_studies
    s = approx.summary[f"N={N_STUDY}"]
    ok = s["success_rate"] >= 0.7
    assert report(6, "scenario-1 success rate", ok, f"approximate kinematic N={N_STUDY}: {s['converged']}/{s['n']}")


def test_c07_approximation_beats_exact(success_studies):
    approx, exact = success_studies
    a, e = approx.summary[f"N={N_STUDY}"], exact.summary[f"N={N_STUDY}"]
    same_ics = [r.seed for r in approx.records] == [r.seed for r in exact.records]
    ok = same_ics and a["converged"] >= e["converged"]
    assert report(7, "approximate vs exact", ok, f"approximate {a['converged']}/50, exact {e['converged']}/50")


def test_c08_ablation_direction(scenario1):
    study = run_ablation(scenario1, 20, N_STUDY)
    full, merit, mono = (study.summary[v]["converged"] for v in ("full", "ablate-merit", "ablate-linesearch"))
    ok = full >= merit and full >= mono and (full - mono) / 20 >= 0.2
    assert report(8, "ablation direction", ok, f"full {full}/20, merit-ablated {merit}/20, monotone {mono}/20")


def test_c09_regularization_sensitivity(scenario1):
    grid = run_regularization_grid(scenario1, (0.0, 1.0, 10.0, 1000.0), (0.8, 0.95), 20, N_STUDY)
    zero = [c.success_rate for c in grid.cells if c.eps0 == 0.0]
    rest = {(c.eps0, c.eta): c.success_rate for c in grid.cells if c.eps0 > 0}
    best = max(rest, key=rest.get)
    ok = max(zero) <= 0.1 and rest[best] >= 0.6
    cells = ", ".join(f"({e:g},{h:g})={r:.0%}" for (e, h), r in rest.items())
    assert report(9, "regularization sensitivity", ok, f"eps0=0: {max(zero):.0%}; {cells}")


def test_c10_exact_vs_approximate_mse():
    rep = run_mse_comparison(bundled_scenario("scenario2"), 20, N_STUDY)
    ok = len(rep.mse) > 0 and rep.median <= 0.1 and rep.agreement_rate >= 0.8
    detail = (f"{len(rep.mse)} joint ({rep.model}{', substituted' if rep.substituted else ''}), "
              f"median {rep.median:.3g}, mean {rep.mean:.3g}, order agreement {rep.agreement_rate:.0%}")
    assert report(10, "exact vs approximate MSE", ok, detail)


MODEL_POINTS = {
    "kinematic_frenet": ([1.5, 3.0, 0.1, 0.05], [0.5, 0.3]),
    "dynamic_frenet": ([1.5, 0.05, 0.4, 3.0, 0.1, 0.05], [0.5, 0.3]),
    "kinematic_inertial": ([1.5, 0.2, -0.1, 0.3], [0.5, 0.3]),
    "dynamic_inertial": ([1.5, 0.05, 0.4, 0.2, -0.1, 0.3], [0.5, 0.3]),
}


def test_c11_integration_order(l_track, params):
    t0 = time.perf_counter()
    orders = {}
    for model, (x, u) in MODEL_POINTS.items():
        # the low-speed tire dynamics are stiff (|lambda| ~ 50 1/s); measure below the stability edge
        ode = functools.partial(ODES[model], p=params, track=l_track)
        orders[model], _ = rk4_order(ode, jnp.asarray(x), jnp.asarray(u), 0.01)
    dt = time.perf_counter() - t0
    ok = min(orders.values()) >= 3.7 and dt < 10
    detail = ", ".join(f"{m} {o:.2f}" for m, o in orders.items()) + f"; {dt:.1f} s"
    assert report(11, "RK4 order", ok, detail)


def test_c12_frenet_and_contouring_identities(l_track):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    round_trip = 0.0
    for _ in range(300):
        s, e = rng.uniform(0, l_track.length), rng.uniform(-0.45, 0.45)
        if abs(e * float(l_track.curvature(np.float64(s)))) >= 0.9:
            continue
        pose = frenet_pose(l_track, np.asarray(frenet_to_inertial(l_track, np.float64(s), np.float64(e))))
        ds = abs(pose.s - s)
        round_trip = max(round_trip, min(ds, l_track.length - ds), abs(pose.e_y - e))
    straight = ParametricTrack([Segment.straight(50.0, 1.0, 1.0)])
    lag = 0.0
    for _ in range(200):
        s_bar, x, y = rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(-1, 1)
        e_l = float(lag_error(straight, np.array([x, y]), np.float64(s_bar)))
        lag = max(lag, abs(e_l - (float(straight.position(np.float64(s_bar))[0]) - x)))
    dt = time.perf_counter() - t0
    ok = round_trip <= 1e-9 and lag <= 1e-12 and dt < 5
    assert report(12, "Frenet and contouring identities", ok, f"round trip {round_trip:.1e}, lag identity {lag:.1e}, {dt:.2f} s")
