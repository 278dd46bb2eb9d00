"""Online ridge identification of the dynamics and its confidence radius.

The regressor is the stacked vector z = (x, u); the parameter matrix is
(d+k) x d so that x' = Theta' z + w.  The design matrix V accumulates
z z' on top of lambda*I; estimates are only read at update epochs, which
is when the determinant-doubling trigger fires.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .control_core import CostSpec, SystemParams
from .errors import NonFiniteObservationError, SingularDesignError


@dataclass(frozen=True)
class DesignState:
    """Sufficient statistics of the recursive least-squares estimator."""

    V: np.ndarray
    cross_sum: np.ndarray
    lam: float
    det_ref: float
    t: int = 0
    last_update_t: int = 0

    @classmethod
    def empty(cls, d: int, k: int, lam: float) -> "DesignState":
        if lam <= 0:
            raise SingularDesignError("regularization must be positive")
        V0 = lam * np.eye(d + k)
        return cls(
            V=V0,
            cross_sum=np.zeros((d + k, d)),
            lam=lam,
            det_ref=float(np.linalg.det(V0)),
        )

    @property
    def d(self) -> int:
        return self.cross_sum.shape[1]

    @property
    def k(self) -> int:
        return self.V.shape[0] - self.cross_sum.shape[1]


@dataclass(frozen=True)
class RlsEstimate:
    """Point estimate of the stacked parameters with its ellipsoid radius."""

    theta_hat: SystemParams
    beta: float


def ingest(state: DesignState, x: np.ndarray, u: np.ndarray, x_next: np.ndarray) -> DesignState:
    """Fold one transition (x, u, x') into the design statistics."""
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    x_next = np.asarray(x_next, dtype=float).ravel()
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u)) and np.all(np.isfinite(x_next))):
        raise NonFiniteObservationError(f"at step t={state.t}")
    z = np.concatenate([x, u])
    return replace(
        state,
        V=state.V + np.outer(z, z),
        cross_sum=state.cross_sum + np.outer(z, x_next),
        t=state.t + 1,
    )


def rls_estimate(state: DesignState, cost: CostSpec, delta: float) -> RlsEstimate:
    """Ridge estimate Theta_hat = V^-1 * sum(z x') and its radius beta.

    beta = d * sigma_w * sqrt(2 * log(det(V)^1/2 / (det(lambda I)^1/2 * delta)))
           + sqrt(lambda) * S.
    """
    d = state.d
    try:
        theta = np.linalg.solve(state.V, state.cross_sum)
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError(str(exc)) from exc
    sign, logdet = np.linalg.slogdet(state.V)
    if sign <= 0:
        raise SingularDesignError("non-positive determinant")
    dim = state.V.shape[0]
    log_ratio = 0.5 * (logdet - dim * math.log(state.lam)) - math.log(delta)
    beta = d * cost.sigma_w * math.sqrt(2.0 * max(log_ratio, 0.0)) + math.sqrt(state.lam) * cost.S
    return RlsEstimate(theta_hat=SystemParams.from_stacked(theta, d), beta=float(beta))


def doubling_due(state: DesignState, patience: int) -> bool:
    """True once det(V) has doubled and the patience period has elapsed."""
    if state.t - state.last_update_t < patience:
        return False
    return float(np.linalg.det(state.V)) > 2.0 * state.det_ref


def mark_updated(state: DesignState) -> DesignState:
    """Reset the doubling reference after a parameter update."""
    return replace(state, det_ref=float(np.linalg.det(state.V)), last_update_t=state.t)


def weighted_norm_inv(V: np.ndarray, theta: SystemParams) -> float:
    """Tr(Theta' V^-1 Theta) for the stacked parameter matrix."""
    from .divergence import weighted_norm_inv_squared

    return weighted_norm_inv_squared(V, theta.stacked())


def ellipsoid_norm(V: np.ndarray, M: np.ndarray) -> float:
    """||M||_V = sqrt(Tr(M' V M)), the matrix-weighted ellipsoid norm."""
    M = np.asarray(M, dtype=float)
    return float(math.sqrt(max(np.trace(M.T @ V @ M), 0.0)))
