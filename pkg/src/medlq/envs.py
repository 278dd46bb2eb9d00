"""Linear-Gaussian simulators and the bundled benchmark environments.

Environment definition files are JSON with fields name, A, B, Q, R,
sigma_w, x0, horizon (matrices as row-major nested arrays).  Decimal
literals parse to the nearest binary float, so definitions are bit-exact
across platforms.
"""

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .control_core import CostSpec, SystemParams, optimal_gain, solve_dare
from .errors import BadEnvFileError, BadEnvParamError, DareDivergedError, NotStabilizableError

GRAVITY = 9.81

# Rollouts abort once the state leaves this box; the run is recorded as
# destabilized instead of propagating infinities.
BLOWUP_LIMIT = 1e6


@dataclass(frozen=True)
class Environment:
    """Immutable true system plus its cost; verified stabilizable at load."""

    name: str
    theta_true: SystemParams
    cost: CostSpec
    x0: np.ndarray
    horizon_default: int
    optimal_cost: float

    @property
    def d(self) -> int:
        return self.theta_true.d

    @property
    def k(self) -> int:
        return self.theta_true.k


@dataclass(frozen=True)
class StepOutcome:
    x_next: np.ndarray
    cost_incurred: float


def make_environment(
    name: str,
    theta: SystemParams,
    cost: CostSpec,
    x0: np.ndarray | None = None,
    horizon_default: int = 2000,
) -> Environment:
    """Assemble and validate an environment (stabilizability via Riccati)."""
    try:
        P = solve_dare(theta, cost)
    except DareDivergedError as exc:
        raise NotStabilizableError(f"environment {name!r}") from exc
    j_star = float(cost.sigma_w**2 * np.trace(P))
    if x0 is None:
        x0 = np.zeros(theta.d)
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.shape != (theta.d,):
        raise BadEnvFileError(f"x0 must have length {theta.d}")
    return Environment(
        name=name,
        theta_true=theta,
        cost=cost,
        x0=x0,
        horizon_default=int(horizon_default),
        optimal_cost=j_star,
    )


def step(env: Environment, x: np.ndarray, u: np.ndarray, rng: np.random.Generator) -> StepOutcome:
    """One transition x' = Ax + Bu + w with w ~ N(0, Omega)."""
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    cost_now = float(x @ env.cost.Q @ x + u @ env.cost.R @ u)
    if env.cost.sigma_w > 0:
        w = rng.multivariate_normal(np.zeros(env.d), env.cost.Omega)
    else:
        w = np.zeros(env.d)
    x_next = env.theta_true.A @ x + env.theta_true.B @ u + w
    return StepOutcome(x_next=x_next, cost_incurred=cost_now)


def pendulum_linearized(mass: float, length: float, dt: float = 0.02) -> SystemParams:
    """Forward-Euler discretization of the upright pendulum linearization.

    State is (angle, angular velocity); open loop is unstable for any
    positive parameters, which the divergence landscape relies on.
    """
    if mass <= 0 or length <= 0 or not 0 < dt <= 0.1:
        raise BadEnvParamError(f"mass={mass}, length={length}, dt={dt}")
    A = np.array([[1.0, dt], [GRAVITY / length * dt, 1.0]])
    B = np.array([[0.0], [dt / (mass * length**2)]])
    return SystemParams(A=A, B=B)


def _parse_matrix(raw, name: str, path: str) -> np.ndarray:
    try:
        M = np.array(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise BadEnvFileError(f"{path}: field {name!r} is not numeric") from exc
    if M.ndim != 2:
        raise BadEnvFileError(f"{path}: field {name!r} must be a nested array")
    return M


def load_environment(path) -> Environment:
    """Read a JSON environment definition and validate it."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise BadEnvFileError(f"{path}: {exc}") from exc
    return environment_from_dict(raw, source=str(path))


def environment_from_dict(raw: dict, source: str = "<dict>") -> Environment:
    for key in ("name", "A", "B", "Q", "R"):
        if key not in raw:
            raise BadEnvFileError(f"{source}: missing field {key!r}")
    A = _parse_matrix(raw["A"], "A", source)
    B = _parse_matrix(raw["B"], "B", source)
    Q = _parse_matrix(raw["Q"], "Q", source)
    R = _parse_matrix(raw["R"], "R", source)
    if A.shape[0] != A.shape[1]:
        raise BadEnvFileError(f"{source}: A must be square")
    if B.shape[0] != A.shape[0]:
        raise BadEnvFileError(f"{source}: B row count {B.shape[0]} != state dim {A.shape[0]}")
    sigma_w = float(raw.get("sigma_w", 1.0))
    try:
        theta = SystemParams(A=A, B=B)
        cost = CostSpec(Q=Q, R=R, sigma_w=sigma_w)
    except Exception as exc:
        raise BadEnvFileError(f"{source}: {exc}") from exc
    return make_environment(
        name=str(raw["name"]),
        theta=theta,
        cost=cost,
        x0=raw.get("x0"),
        horizon_default=int(raw.get("horizon", 2000)),
    )


def _bundled_dir():
    return resources.files("medlq") / "envs_data"


def bundled_names() -> list[str]:
    return sorted(p.name[:-5] for p in _bundled_dir().iterdir() if p.name.endswith(".json"))


def load_bundled(name: str) -> Environment:
    """Load one of the shipped environments by name."""
    entry = _bundled_dir() / f"{name}.json"
    if not entry.is_file():
        raise BadEnvFileError(f"no bundled environment {name!r}; have {bundled_names()}")
    return environment_from_dict(json.loads(entry.read_text()), source=f"bundled:{name}")


def resolve_environment(spec: str) -> Environment:
    """Bundled name or path to a definition file."""
    if Path(spec).is_file():
        return load_environment(spec)
    return load_bundled(spec)


def stabilizing_reference_gain(env: Environment, relative_scale: float = 0.1, seed: int = 0):
    """A deliberately suboptimal but stabilizing gain for an environment.

    Default initialization for the stable-init scenario: the optimal gain
    of a randomly perturbed copy of the true parameters (entrywise
    Gaussian, scaled to relative_scale of the parameter norm), retrying
    until the resulting gain stabilizes the true system.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, env.d, env.k]))
    theta = env.theta_true
    scale = relative_scale * np.linalg.norm(theta.stacked(), "fro") / np.sqrt(theta.stacked().size)
    for _ in range(100):
        A_p = theta.A + scale * rng.standard_normal(theta.A.shape)
        B_p = theta.B + scale * rng.standard_normal(theta.B.shape)
        try:
            pol = optimal_gain(SystemParams(A_p, B_p), env.cost)
        except DareDivergedError:
            continue
        from .control_core import closed_loop

        true_pol = closed_loop(theta, pol.K)
        if true_pol.stabilizing:
            return true_pol
    # Degenerate fallback: the oracle gain itself.
    return optimal_gain(theta, env.cost)
