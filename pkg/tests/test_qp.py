"""Convex QP subproblem solver and PSD projection."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dgsqp.qp import (
    QpError,
    QpSubproblem,
    newton_step,
    project_psd,
    solve_eqp,
    solve_qp,
    solve_qp_elastic,
)
from oracles import enumerate_active_sets, random_convex_qp


class TestSolveQp:
    def test_matches_active_set_enumeration(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            B, h, G, c = random_convex_qp(rng)
            sol = solve_qp(QpSubproblem(B, h, G, c))
            x_ref, d_ref = enumerate_active_sets(B, h, G, c)
            assert sol.status == "solved"
            np.testing.assert_allclose(sol.p_u, x_ref, atol=1e-8)
            np.testing.assert_allclose(sol.d, d_ref, atol=1e-8)

    def test_unconstrained_is_newton_point(self):
        B = np.array([[2.0, 0.5], [0.5, 1.0]])
        h = np.array([1.0, -1.0])
        sol = solve_qp(QpSubproblem(B, h, np.zeros((0, 2)), np.zeros(0)))
        np.testing.assert_allclose(sol.p_u, -np.linalg.solve(B, h), atol=1e-12)

    def test_kkt_residuals_small(self):
        rng = np.random.default_rng(3)
        B, h, G, c = random_convex_qp(rng, 6, 4)
        qp = QpSubproblem(B, h, G, c)
        res = solve_qp(qp).kkt_residuals(qp)
        assert max(res.values()) < 1e-9

    def test_infeasible_qp_is_flagged(self):
        # p <= -1 and -p <= -1 cannot both hold
        qp = QpSubproblem(np.eye(1), np.zeros(1), np.array([[1.0], [-1.0]]), np.array([1.0, 1.0]))
        assert solve_qp(qp).status != "solved"

    def test_elastic_relaxation_always_solves(self):
        qp = QpSubproblem(np.eye(1), np.zeros(1), np.array([[1.0], [-1.0]]), np.array([1.0, 1.0]))
        sol = solve_qp_elastic(qp, penalty=10.0)
        assert sol.status == "solved" and sol.relaxed
        assert abs(sol.p_u[0]) < 1e-6  # symmetric violation is cheapest at zero

    def test_shape_mismatch_raises(self):
        with pytest.raises(QpError):
            QpSubproblem(np.eye(3), np.zeros(2), np.zeros((0, 2)), np.zeros(0))


class TestProjectPsd:
    def test_properties_on_random_matrices(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            A = rng.normal(size=(6, 6))
            X = 0.5 * (A + A.T)
            Y = project_psd(X)
            np.testing.assert_allclose(project_psd(Y), Y, atol=1e-12)
            assert np.linalg.eigvalsh(Y).min() >= -1e-10
            best = np.linalg.norm(X - Y)
            for _ in range(1000):
                C = rng.normal(size=(6, 6))
                assert np.linalg.norm(X - C @ C.T * rng.uniform(0, 1)) >= best - 1e-12

    def test_psd_input_unchanged(self):
        A = np.array([[2.0, 1.0], [1.0, 2.0]])
        np.testing.assert_allclose(project_psd(A), A, atol=1e-14)

    def test_negative_definite_maps_to_zero(self):
        np.testing.assert_allclose(project_psd(-np.eye(3)), np.zeros((3, 3)), atol=1e-15)

    def test_asymmetric_input_rejected(self):
        with pytest.raises(QpError):
            project_psd(np.array([[0.0, 1.0], [0.0, 0.0]]))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (4, 4), elements=st.floats(-1e3, 1e3)))
    def test_always_psd_and_symmetric(self, A):
        Y = project_psd(0.5 * (A + A.T))
        np.testing.assert_allclose(Y, Y.T, atol=0)
        assert np.linalg.eigvalsh(Y).min() >= -1e-9 * max(1.0, np.abs(A).max())


class TestEqualityAndNewton:
    def test_eqp_solves_kkt_system(self):
        rng = np.random.default_rng(2)
        A = rng.normal(size=(4, 4))
        B = A @ A.T + np.eye(4)
        h = rng.normal(size=4)
        G = rng.normal(size=(2, 4))
        c = rng.normal(size=2)
        p, lam = solve_eqp(B, h, G, c)
        np.testing.assert_allclose(G @ p + c, 0, atol=1e-12)
        np.testing.assert_allclose(B @ p + h + G.T @ lam, 0, atol=1e-12)

    def test_rank_deficient_constraints_raise(self):
        G = np.array([[1.0, 0.0], [2.0, 0.0]])
        with pytest.raises(QpError):
            solve_eqp(np.eye(2), np.zeros(2), G, np.zeros(2))

    def test_newton_step_on_symmetric_l_is_eqp_dual_step(self):
        rng = np.random.default_rng(5)
        A = rng.normal(size=(3, 3))
        L = A @ A.T + np.eye(3)
        h, G, c, lam = rng.normal(size=3), rng.normal(size=(1, 3)), rng.normal(size=1), np.array([0.7])
        p_n, dl = newton_step(L, h, G, c, lam)
        p_e, d = solve_eqp(L, h, G, c)
        np.testing.assert_allclose(p_n, p_e, atol=1e-12)
        np.testing.assert_allclose(lam + dl, d, atol=1e-12)

    def test_singular_newton_system_raises(self):
        with pytest.raises(QpError):
            newton_step(np.zeros((2, 2)), np.ones(2), np.zeros((0, 2)), np.zeros(0), np.zeros(0))
