import math

import numpy as np
import pytest

from medlq.control_core import CostSpec, SystemParams
from medlq.errors import NonFiniteObservationError, SingularDesignError
from medlq.estimation import (
    DesignState,
    doubling_due,
    ellipsoid_norm,
    ingest,
    mark_updated,
    rls_estimate,
    weighted_norm_inv,
)


def simulate(theta, n, rng, sigma_w=1.0, lam=1e-4):
    """Drive the true system with white-noise inputs and ingest everything."""
    d, k = theta.d, theta.k
    state = DesignState.empty(d, k, lam)
    x = np.zeros(d)
    for _ in range(n):
        u = rng.standard_normal(k)
        x_next = theta.A @ x + theta.B @ u + sigma_w * rng.standard_normal(d)
        state = ingest(state, x, u, x_next)
        x = x_next
    return state


class TestDesignState:
    def test_empty(self):
        state = DesignState.empty(2, 1, 0.5)
        np.testing.assert_allclose(state.V, 0.5 * np.eye(3))
        assert state.d == 2 and state.k == 1
        assert state.t == 0
        assert state.det_ref == pytest.approx(0.5**3)

    def test_bad_lambda(self):
        with pytest.raises(SingularDesignError):
            DesignState.empty(2, 1, 0.0)


class TestIngest:
    def test_batch_sum_oracle(self):
        """Sequential ingestion equals the closed-form batch sums."""
        rng = np.random.default_rng(0)
        xs = rng.standard_normal((20, 2))
        us = rng.standard_normal((20, 1))
        nexts = rng.standard_normal((20, 2))
        state = DesignState.empty(2, 1, 1e-4)
        for x, u, xn in zip(xs, us, nexts):
            state = ingest(state, x, u, xn)
        Z = np.hstack([xs, us])
        np.testing.assert_allclose(state.V, 1e-4 * np.eye(3) + Z.T @ Z, atol=1e-12)
        np.testing.assert_allclose(state.cross_sum, Z.T @ nexts, atol=1e-12)
        assert state.t == 20

    def test_immutability(self):
        state = DesignState.empty(1, 1, 1.0)
        ingest(state, [1.0], [2.0], [0.5])
        np.testing.assert_allclose(state.V, np.eye(2))
        assert state.t == 0

    def test_non_finite_rejected(self):
        state = DesignState.empty(1, 1, 1.0)
        with pytest.raises(NonFiniteObservationError):
            ingest(state, [np.inf], [0.0], [0.0])
        with pytest.raises(NonFiniteObservationError):
            ingest(state, [0.0], [0.0], [np.nan])


class TestRlsEstimate:
    def test_normal_equations_oracle(self):
        """Estimate matches the explicit ridge solution on the raw data."""
        rng = np.random.default_rng(3)
        xs = rng.standard_normal((50, 2))
        us = rng.standard_normal((50, 1))
        nexts = rng.standard_normal((50, 2))
        lam = 0.01
        state = DesignState.empty(2, 1, lam)
        for x, u, xn in zip(xs, us, nexts):
            state = ingest(state, x, u, xn)
        cost = CostSpec(Q=np.eye(2), R=np.eye(1))
        est = rls_estimate(state, cost, delta=1e-4)
        Z = np.hstack([xs, us])
        ridge = np.linalg.solve(lam * np.eye(3) + Z.T @ Z, Z.T @ nexts)
        np.testing.assert_allclose(est.theta_hat.stacked(), ridge, atol=1e-10)

    def test_consistency_on_true_system(self):
        theta = SystemParams(A=[[0.8, 0.1], [0.0, 0.7]], B=[[0.0], [1.0]])
        rng = np.random.default_rng(5)
        state = simulate(theta, 20000, rng, sigma_w=0.5)
        cost = CostSpec(Q=np.eye(2), R=np.eye(1), sigma_w=0.5)
        est = rls_estimate(state, cost, delta=1e-4)
        assert np.linalg.norm(est.theta_hat.stacked() - theta.stacked()) < 0.05

    def test_beta_closed_form(self):
        lam, delta, S = 0.25, 1e-3, 50.0
        state = DesignState.empty(1, 1, lam)
        state = ingest(state, [1.0], [2.0], [0.3])
        cost = CostSpec(Q=[[1.0]], R=[[1.0]], S=S)
        est = rls_estimate(state, cost, delta)
        det_v = np.linalg.det(state.V)
        expected = 1 * 1.0 * math.sqrt(
            2 * math.log(math.sqrt(det_v) / (math.sqrt(lam**2) * delta))
        ) + math.sqrt(lam) * S
        assert est.beta == pytest.approx(expected, rel=1e-12)

    def test_beta_grows_with_data(self):
        rng = np.random.default_rng(1)
        theta = SystemParams(A=[[0.5]], B=[[1.0]])
        cost = CostSpec(Q=[[1.0]], R=[[1.0]])
        s1 = simulate(theta, 10, rng)
        s2 = simulate(theta, 1000, rng)
        b1 = rls_estimate(s1, cost, 1e-4).beta
        b2 = rls_estimate(s2, cost, 1e-4).beta
        assert b2 > b1  # log det grows with accumulated excitation


class TestDoubling:
    def test_not_due_before_patience(self):
        state = DesignState.empty(1, 1, 1.0)
        rng = np.random.default_rng(2)
        for _ in range(5):
            state = ingest(state, rng.standard_normal(1) * 10, [0.0], [0.0])
        # determinant has more than doubled but only 5 steps elapsed
        assert np.linalg.det(state.V) > 2 * state.det_ref
        assert not doubling_due(state, patience=10)
        assert doubling_due(state, patience=5)

    def test_not_due_without_determinant_growth(self):
        state = DesignState.empty(1, 1, 1.0)
        for _ in range(20):
            state = ingest(state, [1e-6], [0.0], [0.0])
        assert not doubling_due(state, patience=10)

    def test_mark_updated_resets(self):
        state = DesignState.empty(1, 1, 1.0)
        rng = np.random.default_rng(4)
        for _ in range(15):
            state = ingest(state, rng.standard_normal(1) * 3, [0.0], [0.0])
        assert doubling_due(state, patience=10)
        state = mark_updated(state)
        assert not doubling_due(state, patience=10)
        assert state.det_ref == pytest.approx(float(np.linalg.det(state.V)))
        assert state.last_update_t == state.t


class TestNorms:
    def test_weighted_norm_inv_identity(self):
        theta = SystemParams(A=[[0.5]], B=[[1.0]])
        # stacked is [[0.5], [1.0]]; with V = I the norm is 0.25 + 1
        assert weighted_norm_inv(np.eye(2), theta) == pytest.approx(1.25)

    def test_ellipsoid_norm_oracle(self):
        rng = np.random.default_rng(6)
        M = rng.standard_normal((3, 2))
        V = rng.standard_normal((3, 3))
        V = V @ V.T + np.eye(3)
        assert ellipsoid_norm(V, M) == pytest.approx(
            math.sqrt(np.trace(M.T @ V @ M)), rel=1e-12
        )

    def test_ellipsoid_norm_zero(self):
        assert ellipsoid_norm(np.eye(2), np.zeros((2, 2))) == 0.0
