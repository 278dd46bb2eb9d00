"""Exact discrete-time LQ control primitives.

Conventions used throughout the package:

* dynamics ``x' = A x + B u + w`` with ``A`` (d x d) and ``B`` (d x k);
* gains act as ``u = -K x``, so the closed loop is ``A_K = A - B K``;
* the optimal gain is ``K = (B' P B + R)^-1 B' P A`` with ``P`` solving the
  discrete algebraic Riccati equation;
* a gain is stabilizing iff the closed-loop spectral radius is < 1.

All functions are pure and deterministic.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DareDivergedError, ShapeMismatchError, UnstableClosedLoopError

# Residual-based convergence thresholds for the iterative solvers.
_DARE_MAX_ITER = 200
_DARE_TOL = 1e-10
_LYAP_DIRECT_DIM = 8
_EIG_TOL = 1e-10


def _as_matrix(M, name: str) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.all(np.isfinite(M)):
        raise ShapeMismatchError(f"{name} has non-finite entries")
    return M


@dataclass(frozen=True)
class SystemParams:
    """Unknown dynamics pair (A, B); stacked form is (d+k) x d."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise ShapeMismatchError("A must be square")
        if B.shape[0] != A.shape[0]:
            raise ShapeMismatchError("B row count must match A")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def k(self) -> int:
        return self.B.shape[1]

    def stacked(self) -> np.ndarray:
        """Return the (d+k) x d parameter matrix [A'; B']."""
        return np.vstack([self.A.T, self.B.T])

    @staticmethod
    def from_stacked(theta: np.ndarray, d: int) -> "SystemParams":
        theta = np.asarray(theta, dtype=float)
        if theta.ndim != 2 or theta.shape[1] != d or theta.shape[0] <= d:
            raise ShapeMismatchError("stacked parameter must be (d+k) x d")
        return SystemParams(A=theta[:d].T, B=theta[d:].T)


@dataclass(frozen=True)
class CostSpec:
    """Quadratic cost and noise description.

    Omega defaults to sigma_w^2 * I.  D bounds the optimal cost and S the
    parameter Frobenius norm; both are only used by the optimistic
    baseline's projection and the confidence radius.
    """

    Q: np.ndarray
    R: np.ndarray
    sigma_w: float = 1.0
    Omega: np.ndarray | None = None
    D: float = 1e4
    S: float = 50.0

    def __post_init__(self):
        Q = _as_matrix(self.Q, "Q")
        R = _as_matrix(self.R, "R")
        for name, M in (("Q", Q), ("R", R)):
            if not np.allclose(M, M.T, atol=1e-12):
                raise ShapeMismatchError(f"{name} must be symmetric")
            if np.min(np.linalg.eigvalsh(M)) <= 1e-10:
                raise ShapeMismatchError(f"{name} must be positive definite")
        if self.sigma_w < 0:
            raise ShapeMismatchError("sigma_w must be nonnegative")
        if self.D <= 0 or self.S <= 0:
            raise ShapeMismatchError("D and S must be positive")
        Omega = self.Omega
        if Omega is None:
            Omega = self.sigma_w**2 * np.eye(Q.shape[0])
        else:
            Omega = _as_matrix(Omega, "Omega")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "Omega", Omega)


@dataclass(frozen=True)
class GainPolicy:
    """Linear feedback gain with its cached closed loop and stability flag."""

    K: np.ndarray
    closed_loop: np.ndarray
    spectral_radius: float
    stabilizing: bool


@dataclass(frozen=True)
class PolicyEvaluation:
    """Value matrix P and average cost J = sigma_w^2 * Tr(P) for one gain."""

    P: np.ndarray
    J: float


def spectral_radius(M: np.ndarray) -> float:
    """Maximum eigenvalue modulus (dense eigensolve; dimensions are tiny)."""
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def closed_loop(theta: SystemParams, K: np.ndarray) -> GainPolicy:
    """Build the closed-loop policy A_K = A - B K for gain K."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.shape != (theta.k, theta.d):
        raise ShapeMismatchError(f"gain must be {theta.k} x {theta.d}, got {K.shape}")
    A_K = theta.A - theta.B @ K
    rho = spectral_radius(A_K)
    return GainPolicy(K=K, closed_loop=A_K, spectral_radius=rho, stabilizing=rho < 1.0)


def _dare_fixed_point(A, B, Q, R, max_iter=5000, tol=_DARE_TOL):
    """Damped fixed-point Riccati iteration, used as the robust fallback."""
    P = Q.copy()
    for _ in range(max_iter):
        if not np.all(np.isfinite(P)):
            raise DareDivergedError("fixed-point iterates diverged")
        BtPB = B.T @ P @ B
        K = np.linalg.solve(BtPB + R, B.T @ P @ A)
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ K
        P_next = 0.5 * (P_next + P_next.T)
        if np.linalg.norm(P_next - P, "fro") <= tol * (1.0 + np.linalg.norm(P_next, "fro")):
            return P_next
        P = P_next
    raise DareDivergedError("fixed-point iteration exhausted")


def solve_dare(theta: SystemParams, cost: CostSpec) -> np.ndarray:
    """Solve P = A'PA + Q - A'PB (B'PB + R)^-1 B'PA.

    Uses the structured doubling iteration (quadratically convergent) and
    falls back to damped fixed-point iteration if doubling breaks down.
    Raises DareDivergedError for non-stabilizable pairs; callers treat
    that as "instance infeasible", never as a crash.
    """
    A, B, Q, R = theta.A, theta.B, cost.Q, cost.R
    d = A.shape[0]
    # Structured doubling: A_k, G_k, H_k with H_k -> P.
    Ak = A.copy()
    Gk = B @ np.linalg.solve(R, B.T)
    Hk = Q.copy()
    I = np.eye(d)
    with np.errstate(over="ignore", invalid="ignore"):
        return _solve_dare_inner(A, B, Q, R, Ak, Gk, Hk, I, d)


def _solve_dare_inner(A, B, Q, R, Ak, Gk, Hk, I, d):
    try:
        for _ in range(_DARE_MAX_ITER):
            M = I + Gk @ Hk
            W = np.linalg.solve(M, np.hstack([Ak, Gk]))
            MA, MG = W[:, :d], W[:, d:]
            H_next = Hk + Ak.T @ Hk @ MA
            H_next = 0.5 * (H_next + H_next.T)
            G_next = Gk + Ak @ MG @ Ak.T
            A_next = Ak @ MA
            delta = np.linalg.norm(H_next - Hk, "fro")
            Ak, Gk, Hk = A_next, 0.5 * (G_next + G_next.T), H_next
            if not np.all(np.isfinite(Hk)):
                raise np.linalg.LinAlgError("doubling produced non-finite iterates")
            if delta <= _DARE_TOL * (1.0 + np.linalg.norm(Hk, "fro")):
                break
        else:
            raise np.linalg.LinAlgError("doubling did not converge")
        P = Hk
    except np.linalg.LinAlgError:
        P = _dare_fixed_point(A, B, Q, R)
    residual = np.linalg.norm(
        P - A.T @ P @ A - Q + A.T @ P @ B @ np.linalg.solve(B.T @ P @ B + R, B.T @ P @ A),
        "fro",
    )
    if not np.isfinite(residual) or residual > 1e-8 * (1.0 + np.linalg.norm(P, "fro")):
        raise DareDivergedError(f"residual {residual:.3e}")
    # A valid solution must produce a stabilizing gain.
    K = np.linalg.solve(B.T @ P @ B + R, B.T @ P @ A)
    if spectral_radius(A - B @ K) >= 1.0:
        raise DareDivergedError("resulting gain not stabilizing")
    return 0.5 * (P + P.T)


def optimal_gain(theta: SystemParams, cost: CostSpec) -> GainPolicy:
    """Gain minimizing the average cost: K = (B'PB + R)^-1 B'PA."""
    P = solve_dare(theta, cost)
    K = np.linalg.solve(theta.B.T @ P @ theta.B + cost.R, theta.B.T @ P @ theta.A)
    return closed_loop(theta, K)


def is_stabilizable(theta: SystemParams, cost: CostSpec) -> bool:
    """True iff the Riccati solve succeeds (yields a stabilizing gain)."""
    try:
        solve_dare(theta, cost)
        return True
    except DareDivergedError:
        return False


def solve_lyapunov_bellman(A_K: np.ndarray, Q_K: np.ndarray) -> np.ndarray:
    """Solve P = Q_K + A_K' P A_K for a stable A_K.

    Direct Kronecker solve up to dimension 8, Smith squaring beyond.
    """
    A_K = np.atleast_2d(np.asarray(A_K, dtype=float))
    Q_K = np.atleast_2d(np.asarray(Q_K, dtype=float))
    d = A_K.shape[0]
    if A_K.shape != (d, d) or Q_K.shape != (d, d):
        raise ShapeMismatchError("A_K and Q_K must be square with equal size")
    if spectral_radius(A_K) >= 1.0:
        raise UnstableClosedLoopError(f"rho={spectral_radius(A_K):.6f}")
    if d <= _LYAP_DIRECT_DIM:
        lhs = np.eye(d * d) - np.kron(A_K.T, A_K.T)
        P = np.linalg.solve(lhs, Q_K.reshape(-1, order="F")).reshape((d, d), order="F")
    else:
        # Smith iteration with squaring: geometric tail, few iterations.
        P = Q_K.copy()
        M = A_K.copy()
        for _ in range(200):
            P_next = P + M.T @ P @ M
            M = M @ M
            if np.linalg.norm(P_next - P, "fro") <= 1e-14 * (1.0 + np.linalg.norm(P_next, "fro")):
                P = P_next
                break
            P = P_next
    if np.allclose(Q_K, Q_K.T, atol=1e-12):
        P = 0.5 * (P + P.T)
    return P


def policy_cost(theta: SystemParams, policy: GainPolicy, cost: CostSpec) -> PolicyEvaluation:
    """Average cost of a gain: P_K from the Bellman-Lyapunov equation.

    Destabilizing gains raise UnstableClosedLoopError; the infinite cost
    is never represented as a float so downstream weights stay NaN-free.
    """
    if policy.spectral_radius >= 1.0:
        raise UnstableClosedLoopError(f"rho={policy.spectral_radius:.6f}")
    Q_K = cost.Q + policy.K.T @ cost.R @ policy.K
    P = solve_lyapunov_bellman(policy.closed_loop, Q_K)
    return PolicyEvaluation(P=P, J=float(cost.sigma_w**2 * np.trace(P)))


def gain_cost(theta: SystemParams, K: np.ndarray, cost: CostSpec) -> float:
    """Convenience: J_K(theta) for a raw gain matrix."""
    return policy_cost(theta, closed_loop(theta, K), cost).J


def stationary_covariance(theta: SystemParams, policy: GainPolicy, Omega: np.ndarray) -> np.ndarray:
    """Stationary state covariance: Sigma = Omega + A_K Sigma A_K'."""
    if policy.spectral_radius >= 1.0:
        raise UnstableClosedLoopError(f"rho={policy.spectral_radius:.6f}")
    # Same Stein equation as the Bellman form after transposing A_K.
    return solve_lyapunov_bellman(policy.closed_loop.T, np.asarray(Omega, dtype=float))
