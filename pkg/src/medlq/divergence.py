"""Confusing-instance search on the line between two LQ parameterizations.

Given a base system and a perturbed one, each with its own optimal gain,
the cost gap L(alpha) = J_{K'}(Theta(alpha)) - J_K(Theta(alpha)) changes
sign on [0, 1]; its root is the cheapest point (in log-likelihood rate)
at which the perturbed gain stops being suboptimal.  The fast path solves
a quadratic surrogate whose coefficients are traces of Lyapunov solutions;
the exact path runs safeguarded Newton on L itself.
"""

import math
from dataclasses import dataclass

import numpy as np

from .control_core import (
    CostSpec,
    GainPolicy,
    SystemParams,
    closed_loop,
    optimal_gain,
    policy_cost,
    solve_lyapunov_bellman,
    spectral_radius,
    stationary_covariance,
)
from .errors import (
    AlphaOutOfRangeError,
    DareDivergedError,
    InterpolationUnstableError,
    MedLqError,
    NoSignChangeError,
    ShapeMismatchError,
    SingularDesignError,
    UnstableClosedLoopError,
)

# Numerator clamp keeping exponential weights finite and ordered.
KL_FLOOR = 1e-12
# Accept the quadratic-surrogate root only if the exact residual at that
# point is this fraction of the endpoint gap.
TAYLOR_RESIDUAL_GATE = 1e-3


@dataclass(frozen=True)
class InterpolationProblem:
    """Endpoints of the line search, with their optimal gains."""

    theta: SystemParams
    theta_prime: SystemParams
    gain: GainPolicy
    gain_prime: GainPolicy
    delta_A: np.ndarray
    delta_B: np.ndarray

    @classmethod
    def from_endpoints(
        cls, theta: SystemParams, theta_prime: SystemParams, cost: CostSpec
    ) -> "InterpolationProblem":
        """Build the problem, solving both endpoint Riccati equations."""
        if theta.A.shape != theta_prime.A.shape or theta.B.shape != theta_prime.B.shape:
            raise ShapeMismatchError("endpoint systems differ in dimension")
        return cls(
            theta=theta,
            theta_prime=theta_prime,
            gain=optimal_gain(theta, cost),
            gain_prime=optimal_gain(theta_prime, cost),
            delta_A=theta_prime.A - theta.A,
            delta_B=theta_prime.B - theta.B,
        )


@dataclass(frozen=True)
class ConfusingInstanceResult:
    """Root of the cost gap and the divergence paid to reach it."""

    alpha_star: float
    theta_tilde: SystemParams
    kl_cost: float
    method: str  # "taylor" | "newton" | "bisection"
    residual: float
    iterations: int = 0


def llr_rate(
    theta: SystemParams, theta_tilde: SystemParams, K: np.ndarray, Omega: np.ndarray
) -> float:
    """Per-step expected log-likelihood rate between two systems under K.

    Both systems are driven by the same gain and share the noise
    covariance; the rate is
    0.5 * Tr((A_K - A~_K)' Omega^-1 (A_K - A~_K) Sigma_K)
    with Sigma_K the stationary covariance of the base system.
    """
    pol = closed_loop(theta, K)
    if not pol.stabilizing:
        raise UnstableClosedLoopError(f"rho={pol.spectral_radius:.6f}")
    pol_tilde = closed_loop(theta_tilde, K)
    M = pol.closed_loop - pol_tilde.closed_loop
    Sigma = stationary_covariance(theta, pol, Omega)
    val = 0.5 * float(np.trace(M.T @ np.linalg.solve(Omega, M) @ Sigma))
    return max(val, 0.0)


def interpolate(problem: InterpolationProblem, alpha: float) -> SystemParams:
    """Point Theta(alpha) on the segment between the endpoints."""
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRangeError(alpha)
    return SystemParams(
        A=problem.theta.A + alpha * problem.delta_A,
        B=problem.theta.B + alpha * problem.delta_B,
    )


def cost_gap(problem: InterpolationProblem, alpha: float, cost: CostSpec) -> float:
    """Exact gap L(alpha) = J_{K'}(Theta(alpha)) - J_K(Theta(alpha)).

    Raises UnstableClosedLoopError naming the gain whose closed loop left
    the unit disk; grid samplers use that to chart the instability
    boundary where the gap diverges.
    """
    th = interpolate(problem, alpha)
    pol_p = closed_loop(th, problem.gain_prime.K)
    if not pol_p.stabilizing:
        raise UnstableClosedLoopError(f"endpoint gain K' at alpha={alpha:.6f}")
    pol = closed_loop(th, problem.gain.K)
    if not pol.stabilizing:
        raise UnstableClosedLoopError(f"endpoint gain K at alpha={alpha:.6f}")
    return policy_cost(th, pol_p, cost).J - policy_cost(th, pol, cost).J


def _gap_signed(problem: InterpolationProblem, alpha: float, cost: CostSpec) -> float:
    """cost_gap with signed-infinity semantics at instability boundaries.

    An unstable closed loop for K' means the gap blew up towards +inf, one
    for K towards -inf; both unstable yields NaN (uninformative probe).
    """
    th = interpolate(problem, alpha)
    pol_p = closed_loop(th, problem.gain_prime.K)
    pol = closed_loop(th, problem.gain.K)
    if not pol_p.stabilizing and not pol.stabilizing:
        return math.nan
    if not pol_p.stabilizing:
        return math.inf
    if not pol.stabilizing:
        return -math.inf
    return policy_cost(th, pol_p, cost).J - policy_cost(th, pol, cost).J


def _result_at(
    problem: InterpolationProblem,
    alpha: float,
    cost: CostSpec,
    method: str,
    residual: float,
    iterations: int = 0,
) -> ConfusingInstanceResult:
    theta_tilde = interpolate(problem, alpha)
    kl = llr_rate(problem.theta, theta_tilde, problem.gain.K, cost.Omega)
    return ConfusingInstanceResult(
        alpha_star=float(alpha),
        theta_tilde=theta_tilde,
        kl_cost=max(kl, KL_FLOOR),
        method=method,
        residual=float(residual),
        iterations=iterations,
    )


def find_root_exact(
    problem: InterpolationProblem, cost: CostSpec, tol: float = 1e-10, max_iter: int = 200
) -> ConfusingInstanceResult:
    """Safeguarded Newton root of L(alpha) on (0, 1).

    Requires L(0) > 0 > L(1) (guaranteed by the candidate mask); keeps a
    sign-change bracket at all times and falls back to bisection whenever
    the Newton step leaves it or hits an unstable interpolation point.
    """
    g0 = _gap_signed(problem, 0.0, cost)
    g1 = _gap_signed(problem, 1.0, cost)
    if math.isnan(g0) or math.isnan(g1) or not (g0 > 0.0 > g1):
        raise NoSignChangeError(f"L(0)={g0:.3e}, L(1)={g1:.3e}")
    lo, hi = 0.0, 1.0
    alpha = 0.5
    fd_step = 1e-6
    used_bisection = False
    for iteration in range(1, max_iter + 1):
        g = _gap_signed(problem, alpha, cost)
        if math.isfinite(g) and abs(g) <= tol:
            return _result_at(
                problem, alpha, cost,
                "bisection" if used_bisection else "newton", g, iteration,
            )
        if math.isnan(g):
            # Uninformative probe: shrink towards the stable lower end.
            used_bisection = True
            hi = alpha
            alpha = 0.5 * (lo + hi)
            continue
        if g > 0:
            lo = alpha
        else:
            hi = alpha
        step_ok = False
        if math.isfinite(g):
            h = min(fd_step, 0.5 * (hi - lo))
            gp = _gap_signed(problem, min(alpha + h, 1.0), cost)
            gm = _gap_signed(problem, max(alpha - h, 0.0), cost)
            if math.isfinite(gp) and math.isfinite(gm):
                dg = (gp - gm) / (min(alpha + h, 1.0) - max(alpha - h, 0.0))
                if dg != 0.0 and math.isfinite(dg):
                    cand = alpha - g / dg
                    if lo < cand < hi:
                        alpha = cand
                        step_ok = True
        if not step_ok:
            used_bisection = True
            alpha = 0.5 * (lo + hi)
        if hi - lo <= 1e-15:
            break
    g = _gap_signed(problem, alpha, cost)
    if math.isfinite(g) and abs(g) <= max(tol, 1e-8):
        return _result_at(problem, alpha, cost, "bisection", g, max_iter)
    if not math.isfinite(g):
        raise InterpolationUnstableError(f"bracket collapsed at alpha={alpha:.6f}")
    raise InterpolationUnstableError(f"no convergence, |L|={abs(g):.3e} at alpha={alpha:.6f}")


def taylor_coefficients(
    problem: InterpolationProblem, K: np.ndarray, cost: CostSpec
) -> tuple[float, float, float]:
    """Quadratic-surrogate coefficients (p, p_bar, p_dbar) for one gain.

    p_bar and p_dbar are traces of Lyapunov solutions driven by the
    closed-loop perturbation Delta_K = Delta_A - Delta_B K.  The same
    quantities are recomputed through the Kronecker/vec route and the two
    paths must agree to 1e-8 relative; a disagreement indicates a solver
    bug and raises.

    Sign convention: p_bar equals d Tr(P_K(Theta(alpha)))/d alpha at
    alpha = 0 (verified against central finite differences in the tests),
    so the surrogate for Tr(P_K(Theta(alpha))) is p + alpha*p_bar +
    alpha^2*p_dbar.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    pol = closed_loop(problem.theta, K)
    if not pol.stabilizing:
        raise UnstableClosedLoopError(f"rho={pol.spectral_radius:.6f}")
    A_K = pol.closed_loop
    # Negative feedback: A_K(alpha) = A_K + alpha (Delta_A - Delta_B K).
    Delta_K = problem.delta_A - problem.delta_B @ K
    Q_K = cost.Q + K.T @ cost.R @ K
    P = solve_lyapunov_bellman(A_K, Q_K)
    cross = A_K.T @ P @ Delta_K
    P_bar = solve_lyapunov_bellman(A_K, cross + cross.T)
    P_dbar = solve_lyapunov_bellman(A_K, Delta_K.T @ P @ Delta_K)
    p = float(np.trace(P))
    p_bar = float(np.trace(P_bar))
    p_dbar = float(np.trace(P_dbar))

    d = A_K.shape[0]
    if d <= 8:
        p_b_k, p_db_k = _taylor_coefficients_kron(A_K, Delta_K, Q_K)
        for lyap, kron, name in ((p_bar, p_b_k, "p_bar"), (p_dbar, p_db_k, "p_dbar")):
            if abs(lyap - kron) > 1e-8 * (1.0 + abs(lyap)):
                raise MedLqError(
                    f"coefficient paths disagree for {name}: {lyap!r} vs {kron!r}"
                )
    return p, p_bar, p_dbar


def _taylor_coefficients_kron(
    A_K: np.ndarray, Delta_K: np.ndarray, Q_K: np.ndarray
) -> tuple[float, float]:
    """Kronecker/vec route for the first- and second-order coefficients."""
    d = A_K.shape[0]
    i_vec = np.eye(d).reshape(-1, order="F")
    q_vec = Q_K.reshape(-1, order="F")
    Y = np.linalg.inv(np.eye(d * d) - np.kron(A_K.T, A_K.T))
    X_bar = np.kron(Delta_K.T, A_K.T) + np.kron(A_K.T, Delta_K.T)
    X_dbar = np.kron(Delta_K.T, Delta_K.T)
    p_bar = float(i_vec @ Y @ X_bar @ Y @ q_vec)
    p_dbar = float(i_vec @ Y @ X_dbar @ Y @ q_vec)
    return p_bar, p_dbar


def taylor_quadratic(
    problem: InterpolationProblem, cost: CostSpec
) -> tuple[float, float, float]:
    """Coefficients (c0, c1, c2) of the surrogate for L(alpha)/sigma_w^2.

    c0 + c1*alpha + c2*alpha^2 with c0 = p_{K'} - p_K etc., matching the
    finite-difference-consistent expansion of each gain's cost.
    """
    p_k, pb_k, pdb_k = taylor_coefficients(problem, problem.gain.K, cost)
    p_p, pb_p, pdb_p = taylor_coefficients(problem, problem.gain_prime.K, cost)
    return p_p - p_k, pb_p - pb_k, pdb_p - pdb_k


def smallest_root_in_unit_interval(c0: float, c1: float, c2: float) -> float | None:
    """Smallest real root of c0 + c1 x + c2 x^2 in (0, 1], else None.

    Uses the numerically stable quadratic formula (no cancellation in the
    larger-magnitude root).
    """
    roots: list[float] = []
    if abs(c2) <= 1e-14 * max(abs(c0), abs(c1), 1.0):
        if c1 != 0.0:
            roots.append(-c0 / c1)
    else:
        disc = c1 * c1 - 4.0 * c2 * c0
        if disc < 0.0:
            return None
        sq = math.sqrt(disc)
        q = -0.5 * (c1 + math.copysign(sq, c1))
        roots.append(q / c2)
        if q != 0.0:
            roots.append(c0 / q)
        elif c0 == 0.0:
            roots.append(0.0)
    in_range = sorted(r for r in roots if 0.0 < r <= 1.0)
    return in_range[0] if in_range else None


def find_root_taylor(
    problem: InterpolationProblem, cost: CostSpec
) -> ConfusingInstanceResult | None:
    """Fast-path root via the quadratic surrogate.

    Returns None (fallback signal) when the discriminant is negative or
    no root lands in (0, 1]; the caller then runs find_root_exact.
    """
    c0, c1, c2 = taylor_quadratic(problem, cost)
    alpha = smallest_root_in_unit_interval(c0, c1, c2)
    if alpha is None:
        return None
    residual = _gap_signed(problem, alpha, cost)
    if not math.isfinite(residual):
        return None
    return _result_at(problem, alpha, cost, "taylor", residual)


def refine_confusing_instance(
    problem: InterpolationProblem, cost: CostSpec, tol: float = 1e-10
) -> ConfusingInstanceResult:
    """Taylor fast path gated by the exact residual, Newton otherwise."""
    try:
        result = find_root_taylor(problem, cost)
    except UnstableClosedLoopError:
        # Large perturbations can destabilize one gain at the opposite
        # endpoint; the expansion is meaningless there.
        result = None
    if result is not None:
        g0 = _gap_signed(problem, 0.0, cost)
        if math.isfinite(g0) and abs(result.residual) <= TAYLOR_RESIDUAL_GATE * abs(g0):
            return result
    return find_root_exact(problem, cost, tol=tol)


def _product_has_negative_real_eigenvalue(prod: np.ndarray) -> bool:
    """Interpolation-stability test on a product of two closed loops.

    The segment between two stable matrices stays stable when their
    product has no eigenvalue on the negative real axis; the products are
    generally non-symmetric, so the test looks at real eigenvalues with a
    small floor rather than at a symmetrized quadratic form.
    """
    ev = np.linalg.eigvals(prod)
    real = np.abs(ev.imag) <= 1e-10 * (1.0 + np.abs(ev.real))
    return bool(np.any(real & (ev.real < -1e-10)))


def candidate_mask(
    theta_hat: SystemParams, theta_bar: SystemParams, cost: CostSpec, epsilon: float
) -> bool:
    """Filter deciding whether a perturbed candidate enters the weighting.

    True iff all of: both systems are stabilized by their own optimal
    gains; the cross closed-loop products have no negative real
    eigenvalue (which keeps the interpolated closed loops stable); and
    the candidate's gain is suboptimal on the current estimate by more
    than epsilon.  Any failure (including Riccati divergence) yields
    False, never an error.
    """
    try:
        pol_hat = optimal_gain(theta_hat, cost)
        pol_bar = optimal_gain(theta_bar, cost)
    except (DareDivergedError, ShapeMismatchError):
        return False
    if not (pol_hat.stabilizing and pol_bar.stabilizing):
        return False
    hat_cross = theta_hat.A - theta_hat.B @ pol_bar.K
    bar_cross = theta_bar.A - theta_bar.B @ pol_hat.K
    for prod in (pol_hat.closed_loop @ hat_cross, bar_cross @ pol_bar.closed_loop):
        if _product_has_negative_real_eigenvalue(prod):
            return False
    # Membership: the candidate's optimal gain must be epsilon-suboptimal
    # on the estimate, which is exactly the bracket condition L(0) > 0.
    try:
        gap = (
            policy_cost(theta_hat, closed_loop(theta_hat, pol_bar.K), cost).J
            - policy_cost(theta_hat, pol_hat, cost).J
        )
    except UnstableClosedLoopError:
        return False
    return gap > epsilon


def weighted_norm_inv_squared(V: np.ndarray, theta: np.ndarray) -> float:
    """Tr(Theta' V^-1 Theta) for a stacked parameter matrix."""
    V = np.asarray(V, dtype=float)
    try:
        L = np.linalg.cholesky(0.5 * (V + V.T))
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError(str(exc)) from exc
    half = np.linalg.solve(L, np.asarray(theta, dtype=float))
    return float(np.sum(half * half))


def med_coefficient(
    theta_hat: SystemParams,
    theta_bar: SystemParams,
    V: np.ndarray,
    cost: CostSpec,
    use_displacement_norm: bool = False,
    problem: InterpolationProblem | None = None,
) -> float:
    """Exponent of a candidate's exploration weight (always <= 0).

    Numerator: refined divergence to the confusing instance on the
    segment towards the candidate.  Denominator: the candidate's squared
    V^-1 norm (or of its displacement from the estimate when
    use_displacement_norm is set).
    """
    if problem is None:
        problem = InterpolationProblem.from_endpoints(theta_hat, theta_bar, cost)
    result = refine_confusing_instance(problem, cost)
    target = theta_bar.stacked()
    if use_displacement_norm:
        target = target - theta_hat.stacked()
    denom = weighted_norm_inv_squared(V, target)
    if denom <= 0.0:
        raise SingularDesignError("zero-norm candidate")
    return -result.kl_cost / denom
