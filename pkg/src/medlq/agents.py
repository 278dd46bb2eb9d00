"""Learning agents: divergence-weighted exploration plus the OFU-style,
sampling-based, oracle, and fixed-gain baselines.

All agents share the same skeleton: ingest every transition into the
ridge estimator, recompute the policy only when the design-matrix
determinant has doubled (with a minimum patience between updates), and
add isotropic excitation noise whenever the current gain fails to
stabilize the current parameter guess.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .control_core import (
    CostSpec,
    GainPolicy,
    SystemParams,
    closed_loop,
    gain_cost,
    optimal_gain,
    policy_cost,
)
from .divergence import (
    InterpolationProblem,
    _product_has_negative_real_eigenvalue,
    med_coefficient,
    refine_confusing_instance,
    weighted_norm_inv_squared,
)
from .errors import DareDivergedError, UnknownAlgoError, UnstableClosedLoopError
from .estimation import (
    DesignState,
    RlsEstimate,
    doubling_due,
    ellipsoid_norm,
    ingest,
    mark_updated,
    rls_estimate,
)


@dataclass(frozen=True)
class MedLqConfig:
    """Shared hyperparameters for all agents.

    epsilon defaults to 1/log(T)^2 when left None; the harness fills it
    in once the horizon is known.
    """

    n_candidates: int = 128
    sigma_eta: float = 1.0
    sigma_nu: float = 0.5
    epsilon: float | None = None
    lam: float = 1e-4
    delta: float = 1e-4
    patience: int = 10
    use_displacement_norm: bool = False
    ofu_iterations: int = 100
    ts_max_attempts: int = 10_000

    def resolved_epsilon(self, horizon: int) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return 1.0 / max(math.log(max(horizon, 3)) ** 2, 1.0)


@dataclass(frozen=True)
class AgentState:
    """Blended parameter, its gain, and the estimator statistics."""

    design: DesignState
    theta_tilde: SystemParams | None
    gain: GainPolicy | None
    phase: str = "active"  # "warmup" | "active"


def generate_candidates(
    theta_hat: SystemParams, cfg: MedLqConfig, rng: np.random.Generator
) -> list[tuple[np.ndarray, SystemParams]]:
    """Rank-one entrywise bumps of the stacked parameter matrix.

    W = eta * e_row e_col' with the row uniform over the d+k stacked rows,
    the column uniform over the d state columns, and eta uniform on
    (-sigma_eta, sigma_eta).
    """
    d, k = theta_hat.d, theta_hat.k
    stacked = theta_hat.stacked()
    out = []
    rows = rng.integers(0, d + k, size=cfg.n_candidates)
    cols = rng.integers(0, d, size=cfg.n_candidates)
    etas = rng.uniform(-cfg.sigma_eta, cfg.sigma_eta, size=cfg.n_candidates)
    for r, c, eta in zip(rows, cols, etas):
        W = np.zeros((d + k, d))
        W[r, c] = eta
        out.append((W, SystemParams.from_stacked(stacked + W, d)))
    return out


def _evaluate_candidate(
    theta_hat: SystemParams,
    pol_hat: GainPolicy,
    j_hat: float,
    theta_bar: SystemParams,
    V: np.ndarray,
    cost: CostSpec,
    epsilon: float,
    use_displacement_norm: bool,
) -> float | None:
    """Mask plus divergence coefficient with the estimate's gain cached.

    Returns the exponent h (<= 0) for masked-in candidates, None for
    masked-out ones.  Semantics match candidate_mask followed by
    med_coefficient; the base-point Riccati solve is just hoisted out of
    the per-candidate loop.
    """
    try:
        pol_bar = optimal_gain(theta_bar, cost)
    except DareDivergedError:
        return None
    hat_cross = theta_hat.A - theta_hat.B @ pol_bar.K
    bar_cross = theta_bar.A - theta_bar.B @ pol_hat.K
    for prod in (pol_hat.closed_loop @ hat_cross, bar_cross @ pol_bar.closed_loop):
        if _product_has_negative_real_eigenvalue(prod):
            return None
    try:
        gap = gain_cost(theta_hat, pol_bar.K, cost) - j_hat
    except UnstableClosedLoopError:
        return None
    if not gap > epsilon:
        return None
    problem = InterpolationProblem(
        theta=theta_hat,
        theta_prime=theta_bar,
        gain=pol_hat,
        gain_prime=pol_bar,
        delta_A=theta_bar.A - theta_hat.A,
        delta_B=theta_bar.B - theta_hat.B,
    )
    try:
        return med_coefficient(
            theta_hat,
            theta_bar,
            V,
            cost,
            use_displacement_norm=use_displacement_norm,
            problem=problem,
        )
    except Exception:
        return None


def medlq_update(
    state: AgentState, cfg: MedLqConfig, cost: CostSpec, rng: np.random.Generator, epsilon: float
) -> AgentState:
    """One divergence-weighted parameter update (called at doubling epochs).

    Softmax weights over masked-in candidates blend their perturbations
    into the estimate; if every candidate is masked out the estimate is
    used as-is (pure exploitation this epoch).
    """
    est = rls_estimate(state.design, cost, cfg.delta)
    theta_hat = est.theta_hat
    candidates = generate_candidates(theta_hat, cfg, rng)
    theta_tilde = theta_hat
    try:
        pol_hat = optimal_gain(theta_hat, cost)
        j_hat = policy_cost(theta_hat, pol_hat, cost).J
    except DareDivergedError:
        pol_hat = None
    if pol_hat is not None:
        hs = np.full(len(candidates), -np.inf)
        for i, (_, theta_bar) in enumerate(candidates):
            h = _evaluate_candidate(
                theta_hat,
                pol_hat,
                j_hat,
                theta_bar,
                state.design.V,
                cost,
                epsilon,
                cfg.use_displacement_norm,
            )
            if h is not None:
                hs[i] = h
        if np.any(np.isfinite(hs)):
            shifted = np.exp(hs - np.max(hs[np.isfinite(hs)]))
            shifted[~np.isfinite(hs)] = 0.0
            weights = shifted / np.sum(shifted)
            blend = theta_hat.stacked()
            for w, (W, _) in zip(weights, candidates):
                blend = blend + w * W
            theta_tilde = SystemParams.from_stacked(blend, theta_hat.d)
    gain = _gain_or_none(theta_tilde, cost)
    if gain is None:
        gain = state.gain
    return AgentState(
        design=mark_updated(state.design),
        theta_tilde=theta_tilde,
        gain=gain,
        phase=state.phase,
    )


def _gain_or_none(theta: SystemParams, cost: CostSpec) -> GainPolicy | None:
    try:
        return optimal_gain(theta, cost)
    except DareDivergedError:
        return None


def medlq_act(
    state: AgentState, x: np.ndarray, cfg: MedLqConfig, rng: np.random.Generator
) -> np.ndarray:
    """Control u = -K x, plus excitation noise when K is not certified.

    The noise fires when the current gain fails to stabilize the current
    blended parameter (or when no gain could be computed at all).
    """
    x = np.asarray(x, dtype=float).ravel()
    k = state.design.k
    if state.gain is None:
        return cfg.sigma_nu * rng.standard_normal(k)
    u = -state.gain.K @ x
    certified = (
        state.theta_tilde is not None
        and closed_loop(state.theta_tilde, state.gain.K).stabilizing
    )
    if not certified:
        u = u + cfg.sigma_nu * rng.standard_normal(k)
    return u


def ofulq_select(
    estimate: RlsEstimate, design: DesignState, cost: CostSpec, cfg: MedLqConfig
) -> SystemParams:
    """Optimistic parameter: approximately minimize the optimal cost over
    the confidence ellipsoid.

    Projected gradient descent with entrywise central finite differences;
    iterates outside the ellipsoid are pulled back by rescaling the
    displacement, and the parameter-norm ball of radius S is enforced the
    same way.  Returns the best stabilizable iterate seen, falling back
    to the estimate itself.
    """
    theta_hat = estimate.theta_hat.stacked()
    d = estimate.theta_hat.d
    beta = estimate.beta

    def objective(stacked: np.ndarray) -> float:
        try:
            th = SystemParams.from_stacked(stacked, d)
            pol = optimal_gain(th, cost)
            j = policy_cost(th, pol, cost).J
        except DareDivergedError:
            return math.inf
        return j if j <= cost.D else math.inf

    def project(stacked: np.ndarray) -> np.ndarray:
        disp = stacked - theta_hat
        norm = ellipsoid_norm(design.V, disp)
        if norm > beta > 0:
            stacked = theta_hat + disp * (beta / norm)
        fro = np.linalg.norm(stacked, "fro")
        if fro > cost.S:
            stacked = stacked * (cost.S / fro)
        return stacked

    current = project(theta_hat.copy())
    best = current.copy()
    best_val = objective(best)
    cur_val = best_val
    scale = max(np.linalg.norm(theta_hat, "fro"), 1.0)
    lr = 0.1 * beta / max(np.trace(design.V), 1.0) ** 0.5 if beta > 0 else 0.0
    if lr == 0.0:
        return estimate.theta_hat
    for _ in range(cfg.ofu_iterations):
        h = 1e-5 * scale
        grad = np.zeros_like(current)
        base_finite = math.isfinite(cur_val)
        for idx in np.ndindex(current.shape):
            plus = current.copy()
            plus[idx] += h
            minus = current.copy()
            minus[idx] -= h
            fp, fm = objective(plus), objective(minus)
            if math.isfinite(fp) and math.isfinite(fm):
                grad[idx] = (fp - fm) / (2 * h)
            elif base_finite and math.isfinite(fm):
                grad[idx] = (cur_val - fm) / h
            elif base_finite and math.isfinite(fp):
                grad[idx] = (fp - cur_val) / h
        gnorm = np.linalg.norm(grad, "fro")
        if gnorm == 0.0:
            break
        step = lr * max(scale, 1.0) / gnorm
        nxt = project(current - step * grad)
        nxt_val = objective(nxt)
        # Halve the step until it is not worse; keep PGD moving otherwise.
        tries = 0
        while nxt_val > cur_val and tries < 8:
            step *= 0.5
            nxt = project(current - step * grad)
            nxt_val = objective(nxt)
            tries += 1
        if nxt_val > cur_val:
            break
        moved = np.linalg.norm(nxt - current, "fro")
        current, cur_val = nxt, nxt_val
        if cur_val < best_val:
            best, best_val = current.copy(), cur_val
        if moved <= 1e-10 * scale:
            break
    if math.isfinite(best_val):
        return SystemParams.from_stacked(best, d)
    return estimate.theta_hat


def tslq_select(
    estimate: RlsEstimate,
    design: DesignState,
    cost: CostSpec,
    cfg: MedLqConfig,
    rng: np.random.Generator,
) -> tuple[SystemParams, bool]:
    """Posterior-style sample from the confidence region.

    Draws matrix-normal perturbations with row covariance beta^2 V^-1 and
    accepts the first stabilizable draw inside the ellipsoid.  Returns
    (parameter, exhausted); after the attempt budget the estimate itself
    is returned with exhausted=True.
    """
    theta_hat = estimate.theta_hat.stacked()
    d = estimate.theta_hat.d
    rows = design.V.shape[0]
    beta = estimate.beta
    if beta == 0.0:
        return estimate.theta_hat, False
    L = np.linalg.cholesky(0.5 * (design.V + design.V.T))
    attempts = 0
    chunk = 256
    while attempts < cfg.ts_max_attempts:
        n = min(chunk, cfg.ts_max_attempts - attempts)
        G = rng.standard_normal((n, rows, d))
        attempts += n
        # ||Theta - Theta_hat||_V = beta * ||G||_F, so the ellipsoid test
        # reduces to a cheap Frobenius check before any Riccati solve.
        norms = np.linalg.norm(G, axis=(1, 2))
        for i in np.flatnonzero(norms <= 1.0):
            sample = theta_hat + beta * np.linalg.solve(L.T, G[i])
            try:
                th = SystemParams.from_stacked(sample, d)
                optimal_gain(th, cost)
            except DareDivergedError:
                continue
            return th, False
    return estimate.theta_hat, True


class Agent:
    """Minimal interface the harness drives."""

    name = "agent"

    def control(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def observe(self, x: np.ndarray, u: np.ndarray, x_next: np.ndarray) -> None:
        raise NotImplementedError

    @property
    def flags(self) -> dict:
        return {}


class _RlsAgentBase(Agent):
    """Common doubling-triggered update loop over the ridge estimator."""

    def __init__(
        self,
        d: int,
        k: int,
        cost: CostSpec,
        cfg: MedLqConfig,
        horizon: int,
        initial_gain: GainPolicy | None = None,
    ):
        self.cost = cost
        self.cfg = cfg
        self.epsilon = cfg.resolved_epsilon(horizon)
        self.state = AgentState(
            design=DesignState.empty(d, k, cfg.lam),
            theta_tilde=None,
            gain=initial_gain,
        )
        self._flags: dict = {}

    def seed_design(self, transitions) -> None:
        """Pre-fill the estimator with (x, u, x') triples."""
        design = self.state.design
        for x, u, x_next in transitions:
            design = ingest(design, x, u, x_next)
        # Seeding counts as the information baseline for the doubling rule.
        self.state = replace(self.state, design=mark_updated(design))

    def control(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if doubling_due(self.state.design, self.cfg.patience):
            self._update(rng)
        return medlq_act(self.state, x, self.cfg, rng)

    def observe(self, x, u, x_next) -> None:
        self.state = replace(self.state, design=ingest(self.state.design, x, u, x_next))

    @property
    def flags(self) -> dict:
        return dict(self._flags)

    def _update(self, rng: np.random.Generator) -> None:
        raise NotImplementedError


class MedLqAgent(_RlsAgentBase):
    name = "medlq"

    def _update(self, rng: np.random.Generator) -> None:
        self.state = medlq_update(self.state, self.cfg, self.cost, rng, self.epsilon)


class OfulqAgent(_RlsAgentBase):
    name = "ofulq"

    def _update(self, rng: np.random.Generator) -> None:
        est = rls_estimate(self.state.design, self.cost, self.cfg.delta)
        theta = ofulq_select(est, self.state.design, self.cost, self.cfg)
        gain = _gain_or_none(theta, self.cost)
        self.state = AgentState(
            design=mark_updated(self.state.design),
            theta_tilde=theta,
            gain=gain if gain is not None else self.state.gain,
        )


class TslqAgent(_RlsAgentBase):
    name = "tslq"

    def _update(self, rng: np.random.Generator) -> None:
        est = rls_estimate(self.state.design, self.cost, self.cfg.delta)
        theta, exhausted = tslq_select(est, self.state.design, self.cost, self.cfg, rng)
        if exhausted:
            self._flags["ts_exhausted"] = self._flags.get("ts_exhausted", 0) + 1
        gain = _gain_or_none(theta, self.cost)
        self.state = AgentState(
            design=mark_updated(self.state.design),
            theta_tilde=theta,
            gain=gain if gain is not None else self.state.gain,
        )


class StaticGainAgent(_RlsAgentBase):
    """Fixed feedback gain; still ingests data so traces stay comparable."""

    name = "fixed"

    def __init__(self, d, k, cost, cfg, horizon, gain: GainPolicy):
        super().__init__(d, k, cost, cfg, horizon, initial_gain=gain)
        self._fixed_gain = gain

    def control(self, x, rng):
        return -self._fixed_gain.K @ np.asarray(x, dtype=float).ravel()

    def _update(self, rng):  # pragma: no cover - control() never triggers it
        pass


class WarmupAgent(Agent):
    """Pure isotropic-noise control for the first steps, then delegate.

    Warmup transitions are still ingested by the wrapped agent, so the
    estimator sees all excitation data.
    """

    def __init__(self, inner: Agent, warmup_steps: int, k: int):
        if warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        self.inner = inner
        self.warmup_steps = warmup_steps
        self.k = k
        self._step = 0
        self.name = f"warmup({inner.name})"

    def control(self, x, rng):
        if self._step < self.warmup_steps:
            return rng.standard_normal(self.k)
        return self.inner.control(x, rng)

    def observe(self, x, u, x_next):
        self._step += 1
        self.inner.observe(x, u, x_next)

    @property
    def flags(self) -> dict:
        return self.inner.flags


AGENT_NAMES = ("medlq", "ofulq", "tslq", "stabl", "tsac", "optimal", "fixed")

WARMUP_STEPS_DEFAULT = 35


def build_agent(
    name: str,
    env,
    cfg: MedLqConfig,
    horizon: int,
    initial_gain: GainPolicy | None = None,
    fixed_gain: GainPolicy | None = None,
    warmup_steps: int = WARMUP_STEPS_DEFAULT,
) -> Agent:
    """Agent registry keyed by the public algorithm names."""
    d, k, cost = env.d, env.k, env.cost
    if name == "medlq":
        return MedLqAgent(d, k, cost, cfg, horizon, initial_gain=initial_gain)
    if name == "ofulq":
        return OfulqAgent(d, k, cost, cfg, horizon, initial_gain=initial_gain)
    if name == "tslq":
        return TslqAgent(d, k, cost, cfg, horizon, initial_gain=initial_gain)
    if name == "stabl":
        return WarmupAgent(OfulqAgent(d, k, cost, cfg, horizon), warmup_steps, k)
    if name == "tsac":
        return WarmupAgent(TslqAgent(d, k, cost, cfg, horizon), warmup_steps, k)
    if name == "optimal":
        oracle = optimal_gain(env.theta_true, cost)
        return StaticGainAgent(d, k, cost, cfg, horizon, gain=oracle)
    if name == "fixed":
        if fixed_gain is None:
            raise UnknownAlgoError("fixed agent requires a gain")
        return StaticGainAgent(d, k, cost, cfg, horizon, gain=fixed_gain)
    raise UnknownAlgoError(name)
