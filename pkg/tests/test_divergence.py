import math

import numpy as np
import pytest

from medlq.control_core import CostSpec, SystemParams, closed_loop, gain_cost, optimal_gain
from medlq.divergence import (
    InterpolationProblem,
    candidate_mask,
    cost_gap,
    find_root_exact,
    find_root_taylor,
    interpolate,
    llr_rate,
    med_coefficient,
    refine_confusing_instance,
    smallest_root_in_unit_interval,
    taylor_coefficients,
    taylor_quadratic,
    weighted_norm_inv_squared,
)
from medlq.envs import pendulum_linearized
from medlq.errors import AlphaOutOfRangeError, SingularDesignError, UnstableClosedLoopError


@pytest.fixture(scope="module")
def pendulum_pair():
    """Two pendulum linearizations with a sign change of the gap on (0, 1)."""
    theta = pendulum_linearized(0.1, 0.4)
    theta_prime = pendulum_linearized(0.14, 0.5)
    cost = CostSpec(Q=np.eye(2), R=np.eye(1))
    return InterpolationProblem.from_endpoints(theta, theta_prime, cost), cost


@pytest.fixture(scope="module")
def far_pendulum_pair():
    """Widely separated pair where the interpolation destabilizes one gain."""
    theta = pendulum_linearized(0.1, 0.4)
    theta_prime = pendulum_linearized(0.3, 1.0)
    cost = CostSpec(Q=np.eye(2), R=np.eye(1))
    return InterpolationProblem.from_endpoints(theta, theta_prime, cost), cost


class TestLlrRate:
    def test_scalar_closed_form(self):
        theta = SystemParams(A=[[0.9]], B=[[1.0]])
        tilde = SystemParams(A=[[0.7]], B=[[1.0]])
        K = np.array([[0.5]])
        # A_K = 0.4, A~_K = 0.2, Sigma = 1 / (1 - 0.16)
        expected = 0.5 * 0.2**2 / (1 - 0.16)
        assert llr_rate(theta, tilde, K, np.eye(1)) == pytest.approx(expected, rel=1e-12)

    def test_zero_for_identical_closed_loop(self):
        theta = SystemParams(A=[[0.5]], B=[[1.0]])
        tilde = SystemParams(A=[[0.8]], B=[[1.6]])  # same A - BK at K = 0.375... no
        K = np.array([[0.0]])
        tilde_same = SystemParams(A=[[0.5]], B=[[2.0]])  # K = 0 hides the B change
        assert llr_rate(theta, tilde_same, K, np.eye(1)) == pytest.approx(0.0, abs=1e-15)

    def test_noise_scale_invariance(self):
        rng = np.random.default_rng(2)
        theta = SystemParams(A=0.3 * rng.standard_normal((3, 3)), B=rng.standard_normal((3, 1)))
        tilde = SystemParams(A=theta.A + 0.05, B=theta.B)
        K = np.zeros((1, 3))
        base = llr_rate(theta, tilde, K, np.eye(3))
        scaled = llr_rate(theta, tilde, K, 4.0 * np.eye(3))
        # Omega^-1 shrinks by the same factor the stationary covariance grows
        assert scaled == pytest.approx(base, rel=1e-10)

    def test_monte_carlo_oracle(self):
        """Empirical average log-likelihood ratio over a long rollout."""
        theta = SystemParams(A=[[0.5]], B=[[1.0]])
        tilde = SystemParams(A=[[0.6]], B=[[1.0]])
        K = np.array([[0.2]])
        rate = llr_rate(theta, tilde, K, np.eye(1))
        a, at = 0.3, 0.4
        rng = np.random.default_rng(77)
        x = 0.0
        total = 0.0
        n = 10**5
        w = rng.standard_normal(n)
        for t in range(n):
            x_next = a * x + w[t]
            # log N(x'; ax, 1) - log N(x'; a~x, 1)
            total += 0.5 * ((x_next - at * x) ** 2 - (x_next - a * x) ** 2)
            x = x_next
        assert total / n == pytest.approx(rate, rel=0.05)

    def test_unstable_gain_raises(self):
        theta = SystemParams(A=[[1.5]], B=[[1.0]])
        with pytest.raises(UnstableClosedLoopError):
            llr_rate(theta, theta, np.array([[0.0]]), np.eye(1))

    def test_quadratic_in_alpha(self, pendulum_pair):
        problem, cost = pendulum_pair
        kl1 = llr_rate(problem.theta, problem.theta_prime, problem.gain.K, cost.Omega)
        for alpha in (0.25, 0.5, 0.75):
            kla = llr_rate(
                problem.theta, interpolate(problem, alpha), problem.gain.K, cost.Omega
            )
            assert kla == pytest.approx(alpha**2 * kl1, rel=1e-10)


class TestInterpolation:
    def test_endpoints(self, pendulum_pair):
        problem, _ = pendulum_pair
        np.testing.assert_allclose(interpolate(problem, 0.0).A, problem.theta.A)
        np.testing.assert_allclose(interpolate(problem, 1.0).B, problem.theta_prime.B)

    def test_out_of_range(self, pendulum_pair):
        problem, _ = pendulum_pair
        with pytest.raises(AlphaOutOfRangeError):
            interpolate(problem, 1.0 + 1e-9)
        with pytest.raises(AlphaOutOfRangeError):
            interpolate(problem, -0.1)

    def test_gap_signs_at_endpoints(self, pendulum_pair):
        problem, cost = pendulum_pair
        assert cost_gap(problem, 0.0, cost) > 0
        assert cost_gap(problem, 1.0, cost) < 0


class TestExactRoot:
    def test_root_zero_residual(self, pendulum_pair):
        problem, cost = pendulum_pair
        res = find_root_exact(problem, cost)
        assert 0 < res.alpha_star < 1
        assert abs(cost_gap(problem, res.alpha_star, cost)) < 1e-8
        assert res.kl_cost > 0

    def test_against_grid_bisection_oracle(self, pendulum_pair):
        problem, cost = pendulum_pair
        res = find_root_exact(problem, cost)
        # Independent oracle: locate the sign change on a fine grid, then
        # plain bisection to 1e-12.
        grid = np.linspace(0.0, 1.0, 2001)
        vals = [cost_gap(problem, a, cost) for a in grid]
        idx = next(i for i in range(len(grid) - 1) if vals[i] > 0 >= vals[i + 1])
        lo, hi = grid[idx], grid[idx + 1]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if cost_gap(problem, mid, cost) > 0:
                lo = mid
            else:
                hi = mid
        assert res.alpha_star == pytest.approx(0.5 * (lo + hi), abs=1e-8)

    def test_iteration_budget(self, pendulum_pair):
        problem, cost = pendulum_pair
        res = find_root_exact(problem, cost)
        assert res.iterations <= 15

    def test_unstable_interior_still_converges(self, far_pendulum_pair):
        # Both endpoint probes blow up (signed infinities) yet the bracket
        # shrinks onto the stable window and finds the root.
        problem, cost = far_pendulum_pair
        res = find_root_exact(problem, cost)
        assert 0 < res.alpha_star < 1
        assert abs(cost_gap(problem, res.alpha_star, cost)) < 1e-7
        assert res.iterations <= 15


class TestTaylor:
    def test_scalar_closed_form(self):
        # A = a, B = 0 so the gain drops out and Delta_K = delta_A.
        a, delta = 0.6, 0.05
        theta = SystemParams(A=[[a]], B=[[1.0]])
        theta_p = SystemParams(A=[[a + delta]], B=[[1.0]])
        cost = CostSpec(Q=[[1.0]], R=[[1.0]])
        problem = InterpolationProblem.from_endpoints(theta, theta_p, cost)
        K = np.array([[0.0]])
        p, p_bar, p_dbar = taylor_coefficients(problem, K, cost)
        q = 1.0
        assert p == pytest.approx(q / (1 - a**2), rel=1e-12)
        assert p_bar == pytest.approx(2 * a * delta * q / (1 - a**2) ** 2, rel=1e-10)
        assert p_dbar == pytest.approx(delta**2 * q / (1 - a**2) ** 2, rel=1e-10)

    def test_first_coefficient_matches_finite_difference(self, pendulum_pair):
        """p_bar must equal the central difference of Tr(P) along alpha."""
        problem, cost = pendulum_pair
        K = problem.gain.K
        _, p_bar, _ = taylor_coefficients(problem, K, cost)
        h = 1e-6
        tp = gain_cost(interpolate(problem, h), K, cost) / cost.sigma_w**2
        tm = gain_cost(problem.theta, K, cost) / cost.sigma_w**2
        # one-sided at alpha = 0 since alpha < 0 is outside the segment
        th2 = gain_cost(interpolate(problem, 2 * h), K, cost) / cost.sigma_w**2
        central = (-3 * tm + 4 * tp - th2) / (2 * h)
        assert p_bar == pytest.approx(central, rel=1e-4)

    def test_second_coefficient_matches_definition_oracle(self, pendulum_pair):
        # p_dbar is a truncated coefficient by construction (the recursion
        # drops the P_bar cross terms), so the oracle is the defining
        # equation solved independently through a dense Kronecker system.
        problem, cost = pendulum_pair
        K = problem.gain.K
        _, _, p_dbar = taylor_coefficients(problem, K, cost)
        A_K = problem.theta.A - problem.theta.B @ K
        Delta_K = problem.delta_A - problem.delta_B @ K
        Q_K = cost.Q + K.T @ cost.R @ K
        d = A_K.shape[0]
        P = np.linalg.solve(
            np.eye(d * d) - np.kron(A_K.T, A_K.T), Q_K.reshape(-1, order="F")
        ).reshape((d, d), order="F")
        rhs = Delta_K.T @ P @ Delta_K
        P_dbar = np.linalg.solve(
            np.eye(d * d) - np.kron(A_K.T, A_K.T), rhs.reshape(-1, order="F")
        ).reshape((d, d), order="F")
        assert p_dbar == pytest.approx(float(np.trace(P_dbar)), rel=1e-10)

    def test_quadratic_surrogate_tracks_gap(self, pendulum_pair):
        problem, cost = pendulum_pair
        c0, c1, c2 = taylor_quadratic(problem, cost)
        assert cost.sigma_w**2 * c0 == pytest.approx(cost_gap(problem, 0.0, cost), rel=1e-10)
        for alpha in (0.05, 0.1, 0.2):
            surrogate = cost.sigma_w**2 * (c0 + c1 * alpha + c2 * alpha**2)
            exact = cost_gap(problem, alpha, cost)
            assert surrogate == pytest.approx(exact, rel=0.06)

    def test_taylor_root_near_exact_small_perturbation(self):
        theta = pendulum_linearized(0.1, 0.4)
        cost = CostSpec(Q=np.eye(2), R=np.eye(1))
        theta_prime = SystemParams(
            A=theta.A + np.array([[0.001, 0.0], [0.0025, 0.001]]), B=1.005 * theta.B
        )
        problem = InterpolationProblem.from_endpoints(theta, theta_prime, cost)
        taylor = find_root_taylor(problem, cost)
        exact = find_root_exact(problem, cost)
        assert taylor is not None
        assert taylor.method == "taylor"
        assert abs(taylor.alpha_star - exact.alpha_star) <= 0.05

    def test_refinement_never_exceeds_crude_bound(self, pendulum_pair):
        # kl(alpha) = alpha^2 kl(1) <= kl(1) for any root in (0, 1]
        problem, cost = pendulum_pair
        crude = llr_rate(problem.theta, problem.theta_prime, problem.gain.K, cost.Omega)
        refined = refine_confusing_instance(problem, cost)
        assert refined.kl_cost <= crude + 1e-12

    def test_refine_falls_back_on_unstable_expansion(self, far_pendulum_pair):
        problem, cost = far_pendulum_pair
        res = refine_confusing_instance(problem, cost)
        assert res.method in ("newton", "bisection")
        assert abs(cost_gap(problem, res.alpha_star, cost)) < 1e-7


class TestQuadraticRoots:
    def test_simple(self):
        # (x - 0.5)(x - 2) = x^2 - 2.5x + 1
        assert smallest_root_in_unit_interval(1.0, -2.5, 1.0) == pytest.approx(0.5)

    def test_linear_degenerate(self):
        assert smallest_root_in_unit_interval(-0.3, 1.0, 0.0) == pytest.approx(0.3)

    def test_no_real_root(self):
        assert smallest_root_in_unit_interval(1.0, 0.0, 1.0) is None

    def test_roots_outside_interval(self):
        # roots 2 and 3
        assert smallest_root_in_unit_interval(6.0, -5.0, 1.0) is None

    def test_root_at_one_included(self):
        # (x - 1)(x - 5)
        assert smallest_root_in_unit_interval(5.0, -6.0, 1.0) == pytest.approx(1.0)

    def test_cancellation_stability(self):
        # roots 1e-8 and 1e8 scaled into the unit interval: c2 = 1,
        # c1 = -(r1 + r2), c0 = r1 r2 with r1 tiny
        r1, r2 = 1e-9, 0.9
        got = smallest_root_in_unit_interval(r1 * r2, -(r1 + r2), 1.0)
        assert got == pytest.approx(r1, rel=1e-6)


class TestCandidateMask:
    # Scalar endpoints with positive closed loops pass every mask group.
    scalar_cost = CostSpec(Q=[[1.0]], R=[[1.0]])
    scalar_hat = SystemParams(A=[[0.5]], B=[[1.0]])
    scalar_bar = SystemParams(A=[[0.55]], B=[[1.0]])

    def test_true_for_mild_perturbation(self):
        assert candidate_mask(self.scalar_hat, self.scalar_bar, self.scalar_cost, 1e-9)

    def test_false_for_identical(self, pendulum_pair):
        problem, cost = pendulum_pair
        assert not candidate_mask(problem.theta, problem.theta, cost, 1e-6)
        assert not candidate_mask(self.scalar_hat, self.scalar_hat, self.scalar_cost, 1e-9)

    def test_false_for_non_stabilizable(self, pendulum_pair):
        problem, cost = pendulum_pair
        bad = SystemParams(A=2.0 * np.eye(2), B=np.zeros((2, 1)))
        assert not candidate_mask(problem.theta, bad, cost, 1e-6)

    def test_epsilon_gate(self):
        problem = InterpolationProblem.from_endpoints(
            self.scalar_hat, self.scalar_bar, self.scalar_cost
        )
        gap = cost_gap(problem, 0.0, self.scalar_cost)
        assert candidate_mask(self.scalar_hat, self.scalar_bar, self.scalar_cost, 0.5 * gap)
        assert not candidate_mask(self.scalar_hat, self.scalar_bar, self.scalar_cost, 2.0 * gap)

    def test_mask_implies_bracket(self):
        # A passing mask must guarantee the sign change the root finder needs.
        problem = InterpolationProblem.from_endpoints(
            self.scalar_hat, self.scalar_bar, self.scalar_cost
        )
        find_root_exact(problem, self.scalar_cost)  # must not raise

    def test_matches_direct_condition_evaluation(self):
        """Mask equals the conjunction of its groups, each coded separately.

        Grid of rank-one bumps on the pendulum estimate, including the
        0.2 bump on the off-diagonal state entry.
        """
        from medlq.control_core import optimal_gain, policy_cost

        theta_hat = pendulum_linearized(0.1, 0.4)
        cost = CostSpec(Q=np.eye(2), R=np.eye(1))
        epsilon = 1e-3
        bumps = [(0, 1, 0.2), (0, 0, 0.1), (1, 1, -0.3), (2, 0, 0.5), (1, 0, -0.05)]
        for row, col, eta in bumps:
            W = np.zeros((3, 2))
            W[row, col] = eta
            theta_bar = SystemParams.from_stacked(theta_hat.stacked() + W, 2)
            expected = True
            try:
                pol_hat = optimal_gain(theta_hat, cost)
                pol_bar = optimal_gain(theta_bar, cost)
            except Exception:
                expected = False
            if expected:
                expected = pol_hat.stabilizing and pol_bar.stabilizing
            if expected:
                hat_k_bar = theta_hat.A - theta_hat.B @ pol_bar.K
                bar_k_hat = theta_bar.A - theta_bar.B @ pol_hat.K
                for prod in (pol_hat.closed_loop @ hat_k_bar, bar_k_hat @ pol_bar.closed_loop):
                    ev = np.linalg.eigvals(prod)
                    real = np.abs(ev.imag) <= 1e-10 * (1.0 + np.abs(ev.real))
                    if np.any(real & (ev.real < -1e-10)):
                        expected = False
            if expected:
                try:
                    gap = (
                        policy_cost(
                            theta_hat,
                            type(pol_hat)(
                                K=pol_bar.K,
                                closed_loop=hat_k_bar,
                                spectral_radius=max(abs(np.linalg.eigvals(hat_k_bar))),
                                stabilizing=bool(max(abs(np.linalg.eigvals(hat_k_bar))) < 1.0),
                            ),
                            cost,
                        ).J
                        - policy_cost(theta_hat, pol_hat, cost).J
                    )
                    expected = gap > epsilon
                except Exception:
                    expected = False
            assert candidate_mask(theta_hat, theta_bar, cost, epsilon) == expected


class TestMedCoefficient:
    def test_identity_design_equals_frobenius(self):
        rng = np.random.default_rng(4)
        M = rng.standard_normal((3, 2))
        assert weighted_norm_inv_squared(np.eye(3), M) == pytest.approx(
            np.sum(M**2), rel=1e-12
        )

    def test_sherman_morrison_oracle(self):
        """Rank-one design update checked against the explicit inverse."""
        rng = np.random.default_rng(9)
        V = np.eye(3)
        z = rng.standard_normal(3)
        V1 = V + np.outer(z, z)
        M = rng.standard_normal((3, 2))
        inv_sm = np.eye(3) - np.outer(z, z) / (1 + z @ z)
        assert weighted_norm_inv_squared(V1, M) == pytest.approx(
            float(np.trace(M.T @ inv_sm @ M)), rel=1e-10
        )

    def test_singular_design_raises(self):
        with pytest.raises(SingularDesignError):
            weighted_norm_inv_squared(np.zeros((2, 2)), np.eye(2))

    def test_nonpositive(self, pendulum_pair):
        problem, cost = pendulum_pair
        V = np.eye(3) * 5.0
        h = med_coefficient(problem.theta, problem.theta_prime, V, cost)
        assert h <= 0.0

    def test_scalar_arithmetic(self):
        theta = SystemParams(A=[[0.5]], B=[[1.0]])
        theta_bar = SystemParams(A=[[0.55]], B=[[1.0]])
        cost = CostSpec(Q=[[1.0]], R=[[1.0]])
        V = 2.0 * np.eye(2)
        problem = InterpolationProblem.from_endpoints(theta, theta_bar, cost)
        res = refine_confusing_instance(problem, cost)
        denom = (0.55**2 + 1.0**2) / 2.0
        got = med_coefficient(theta, theta_bar, V, cost, problem=problem)
        assert got == pytest.approx(-res.kl_cost / denom, rel=1e-10)

    def test_displacement_variant(self):
        theta = SystemParams(A=[[0.5]], B=[[1.0]])
        theta_bar = SystemParams(A=[[0.55]], B=[[1.0]])
        cost = CostSpec(Q=[[1.0]], R=[[1.0]])
        V = np.eye(2)
        full = med_coefficient(theta, theta_bar, V, cost)
        disp = med_coefficient(theta, theta_bar, V, cost, use_displacement_norm=True)
        # displacement norm is much smaller, so the exponent is more negative
        assert disp < full
