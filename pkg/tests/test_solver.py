"""DG-SQP iteration, merit bookkeeping and the watchdog line search."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgsqp.game import eval_derivatives, eval_first_order
from dgsqp.qp import newton_step, solve_qp
from dgsqp.solver import (
    TRACE_COLUMNS,
    Residuals,
    SolverConfig,
    build_subproblem,
    check_convergence,
    directional_derivative,
    gamma_slope,
    init_duals,
    least_squares_duals,
    merit,
    regularized_hessian,
    residuals,
    slack_of,
    solve,
    update_mu,
)
from dgsqp.toy_games import lq_game, potential_game


def lq_solution(game):
    """Stacked first-order conditions of an unconstrained LQ game are linear: L u + F(0) = 0."""
    z = np.zeros(game.dims.num_decision)
    b = eval_derivatives(game, z, np.zeros(0))
    return np.linalg.solve(b.L, -b.grad_lagrangian)


class TestConfig:
    def test_defaults(self):
        c = SolverConfig()
        assert (c.eps0, c.eta, c.conv_tol) == (10.0, 0.95, (1e-4, 1e-4, 1e-4))

    @pytest.mark.parametrize("bad", [dict(eps0=-1), dict(eta=0), dict(eta=1.5), dict(rho=1), dict(zeta=0.6),
                                     dict(conv_tol=0), dict(merit="x"), dict(merit_memory=0), dict(backtrack=1)])
    def test_rejects_invalid(self, bad):
        with pytest.raises(ValueError):
            SolverConfig(**bad)

    def test_from_dict_sections(self):
        c = SolverConfig.from_dict({"eps0": 1, "watchdog": {"max_d_steps": 3, "memory": 2}, "merit": {"kind": "cost_sum"}})
        assert (c.eps0, c.max_d_steps, c.merit_memory, c.merit) == (1, 3, 2, "cost_sum")

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            SolverConfig.from_dict({"speed": 1})

    def test_from_toml(self, tmp_path):
        path = tmp_path / "s.toml"
        path.write_text("[solver]\neta = 0.8\nconv_tol = [1e-5, 1e-4, 1e-4]\n")
        c = SolverConfig.from_toml(path)
        assert c.eta == 0.8 and c.conv_tol[0] == 1e-5


class TestBuildingBlocks:
    def test_slack(self):
        np.testing.assert_array_equal(slack_of(np.array([-2.0, 0.0, 3.0])), [-2.0, 0.0, 0.0])

    def test_merit_value(self):
        F = np.array([3.0, 4.0])
        C = np.array([1.0, -1.0])
        assert merit(F, C, slack_of(C), 2.0) == pytest.approx(12.5 + 2.0)

    def test_mu_zero_when_feasible(self):
        assert update_mu(5.0, np.zeros(3), 0.5, 1e-4) == 0.0

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-1e3, 1e3), st.floats(1e-6, 1e3), st.floats(0.05, 0.95), st.floats(0, 10))
    def test_mu_gives_sufficient_descent(self, slope, viol, rho, mu_prev):
        c = np.array([viol])
        mu = update_mu(slope, c, rho, 1e-4, mu_prev)
        assert mu >= mu_prev
        assert directional_derivative(slope, mu, c) <= -rho * mu * viol * (1 - 1e-9) + 1e-9 * abs(slope)

    def test_least_squares_duals_nonnegative(self):
        rng = np.random.default_rng(0)
        lam = least_squares_duals(rng.normal(size=(3, 5)), rng.normal(size=5))
        assert np.all(lam >= 0)

    def test_init_duals_unconstrained(self):
        assert init_duals(lq_game(), np.zeros(10)).size == 0

    def test_regularized_hessian_is_pd(self):
        L = np.array([[1.0, 3.0], [-1.0, -2.0]])
        B = regularized_hessian(L, 0.1)
        assert np.linalg.eigvalsh(B).min() >= 0.1 - 1e-12

    def test_residuals_and_convergence(self):
        r = residuals(np.array([1e-5, -2e-5]), np.array([-1.0, 5e-5]), np.array([0.0, 1.0]))
        assert r == Residuals(2e-5, 5e-5, 5e-5)
        assert check_convergence(r, SolverConfig())
        assert not check_convergence(r, SolverConfig(conv_tol=1e-5))

    def test_directional_derivative_matches_finite_difference(self):
        g = potential_game(caps=(0.05, 10.0))
        rng = np.random.default_rng(1)
        u = rng.normal(size=g.dims.num_decision) + 1.0  # violates the first cap
        lam = np.array([0.5, 0.0])
        b = eval_derivatives(g, u, lam)
        sol = solve_qp(build_subproblem(b, 1.0))
        p_lam = sol.d - lam
        s = slack_of(b.constraints)
        p_s = b.constraints + b.G @ sol.p_u - s
        head = gamma_slope(b.grad_lagrangian, b.L, b.G, sol.p_u, p_lam)
        mu = update_mu(head, b.constraints - s, 0.5, 1e-4)
        expected = directional_derivative(head, mu, b.constraints - s)

        def phi(a):
            F, C, _ = eval_first_order(g, u + a * sol.p_u, lam + a * p_lam)
            return merit(F, C, s + a * p_s, mu)

        a = 1e-6
        assert (phi(a) - phi(0.0)) / a == pytest.approx(expected, rel=1e-3, abs=1e-6)


class TestSolve:
    def test_lq_converges_to_stacked_kkt_solution(self):
        g = lq_game()
        u_star = lq_solution(g)
        errors = []
        res = solve(g, np.zeros(g.dims.num_decision), SolverConfig(conv_tol=1e-10),
                    callback=lambda rec, u, lam: errors.append(np.linalg.norm(u - u_star)))
        assert res.converged
        assert np.max(np.abs(res.u - u_star)) <= 1e-6

    def test_lq_linear_rate(self):
        g = lq_game()
        u_star = lq_solution(g)
        errors = [np.linalg.norm(u_star)]
        solve(g, np.zeros(g.dims.num_decision), SolverConfig(conv_tol=1e-12),
              callback=lambda rec, u, lam: errors.append(np.linalg.norm(u - u_star)))
        inside = [k for k, e in enumerate(errors) if e < 1e-2]
        ratios = [errors[k + 1] / errors[k] for k in inside[:-1] if errors[k] > 1e-11]
        assert ratios and max(ratios) <= 0.9

    def test_potential_game_qp_step_is_newton_step(self):
        g = potential_game()
        u = np.zeros(g.dims.num_decision)
        lam = np.zeros(2)
        b = eval_derivatives(g, u, lam)
        assert np.linalg.eigvalsh(0.5 * (b.L + b.L.T)).min() > 0
        np.testing.assert_allclose(b.L, b.L.T, atol=1e-12)
        sol = solve_qp(build_subproblem(b, 0.0))
        active = sol.d > 1e-9
        assert active.any()
        p, dl = newton_step(b.L, b.h, b.G[active], b.constraints[active], lam[active])
        np.testing.assert_allclose(sol.p_u, p, atol=1e-9)
        np.testing.assert_allclose(sol.d[active], lam[active] + dl, atol=1e-9)

    def test_constrained_potential_game_kkt(self):
        g = potential_game()
        res = solve(g, np.zeros(g.dims.num_decision))
        assert res.converged
        C = eval_first_order(g, res.u, res.lam)[1]
        assert C[0] == pytest.approx(0.0, abs=1e-4)  # first cap active
        assert res.lam[0] > 0 and res.lam[1] == 0.0

    def test_trace_and_result_fields(self, tmp_path):
        g = lq_game()
        res = solve(g, np.zeros(g.dims.num_decision))
        assert res.trace[-1]["step_kind"] == "converged"
        assert all(len(row) == len(TRACE_COLUMNS) for row in res.trace_rows())
        res.write_trace(tmp_path / "trace.csv")
        assert (tmp_path / "trace.csv").read_text().splitlines()[0] == ",".join(TRACE_COLUMNS)

    def test_converged_iff_within_tolerance(self):
        g = potential_game()
        cfg = SolverConfig()
        res = solve(g, np.zeros(g.dims.num_decision), cfg)
        assert res.converged == res.residuals.within(cfg.conv_tol)

    def test_max_iterations_status(self):
        g = potential_game()
        res = solve(g, np.ones(g.dims.num_decision) * 3, SolverConfig(max_iter=1, conv_tol=1e-14))
        assert res.status == "max_iterations" and res.iterations == 1

    def test_regularization_decays_only_on_decrease_steps(self):
        g = potential_game()
        res = solve(g, np.ones(g.dims.num_decision) * 3, SolverConfig(eta=0.5))
        eps = 10.0
        for rec in res.trace:  # each record carries the eps used for its step
            assert rec["eps"] == pytest.approx(eps)
            if rec["step_kind"] in ("m", "watchdog_reset"):
                eps *= 0.5
        assert res.eps == pytest.approx(eps)

    def test_monotone_configuration_takes_no_relaxed_steps(self):
        g = potential_game()
        res = solve(g, np.ones(g.dims.num_decision) * 3, SolverConfig(max_d_steps=0, merit_memory=1))
        assert "d" not in {rec["step_kind"] for rec in res.trace}

    def test_initial_point_solution_needs_no_iterations(self):
        g = lq_game()
        res = solve(g, lq_solution(g))
        assert res.converged and res.iterations == 0

    def test_bad_u0_shape(self):
        with pytest.raises(ValueError):
            solve(lq_game(), np.zeros(3))

    def test_nan_inputs_do_not_raise(self):
        g = lq_game()
        res = solve(g, np.full(g.dims.num_decision, math.nan))
        assert not res.converged
