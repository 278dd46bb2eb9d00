"""Multi-seed experiment runner, regret accounting, and report emission.

CSV is the output contract; figure rendering (plots module) only ever
consumes these files.  Every output byte is a pure function of the
experiment spec and the base seed.
"""

import csv
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .agents import (
    AGENT_NAMES,
    MedLqConfig,
    StaticGainAgent,
    WarmupAgent,
    build_agent,
)
from .control_core import GainPolicy
from .divergence import (
    InterpolationProblem,
    cost_gap,
    find_root_exact,
    find_root_taylor,
)
from .envs import (
    BLOWUP_LIMIT,
    Environment,
    resolve_environment,
    stabilizing_reference_gain,
    step,
)
from .errors import UnknownAlgoError, UnstableClosedLoopError

SCENARIOS = ("stable_init", "auto_stab")
SEED_TRAJECTORY_STEPS = 50
# Seeding inputs carry unit isotropic dither, the same scale as the
# auto-stabilization warmup noise N(0, I).
SEED_DITHER_STD = 1.0
FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class ExperimentSpec:
    """One environment, several algorithms, several seeds."""

    env_name: str
    algo_names: tuple[str, ...]
    horizon: int = 2000
    n_seeds: int = 16
    scenario: str = "stable_init"
    base_seed: int = 0
    agent_config: MedLqConfig = field(default_factory=MedLqConfig)
    fixed_gain: np.ndarray | None = None
    warmup_steps: int = 35

    def __post_init__(self):
        if self.horizon < 1 or self.n_seeds < 1:
            raise ValueError("horizon and n_seeds must be >= 1")
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        for name in self.algo_names:
            if name not in AGENT_NAMES:
                raise UnknownAlgoError(name)


@dataclass
class ExperimentTrace:
    """Per-step record of one (environment, algorithm, seed) run."""

    env: str
    algo: str
    seed: int
    instant_costs: np.ndarray
    cumulative_regret: np.ndarray
    destabilized: bool
    ts_exhausted: int
    wall_time: float


def _name_hash(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def _run_rng(base_seed: int, env: str, algo: str, seed: int):
    ss = np.random.SeedSequence([base_seed, _name_hash(env), _name_hash(algo), seed])
    env_rng, agent_rng, init_rng = [np.random.default_rng(s) for s in ss.spawn(3)]
    return env_rng, agent_rng, init_rng


def run_single(spec: ExperimentSpec, env: Environment, algo: str, seed: int) -> ExperimentTrace:
    """One reproducible run; never raises for in-run blow-ups."""
    env_rng, agent_rng, init_rng = _run_rng(spec.base_seed, env.name, algo, seed)
    t_start = time.perf_counter()

    initial_gain = None
    if spec.scenario == "stable_init":
        initial_gain = stabilizing_reference_gain(env, seed=spec.base_seed)
    fixed_gain = None
    if algo == "fixed":
        if spec.fixed_gain is not None:
            from .control_core import closed_loop

            fixed_gain = closed_loop(env.theta_true, spec.fixed_gain)
        else:
            fixed_gain = initial_gain or stabilizing_reference_gain(env, seed=spec.base_seed)

    agent = build_agent(
        algo,
        env,
        spec.agent_config,
        spec.horizon,
        initial_gain=initial_gain,
        fixed_gain=fixed_gain,
        warmup_steps=spec.warmup_steps,
    )
    x = env.x0.copy()
    if spec.scenario == "stable_init":
        x = _seed_with_trajectory(agent, env, initial_gain, x, init_rng)
    elif not isinstance(agent, (WarmupAgent, StaticGainAgent)):
        agent = WarmupAgent(agent, spec.warmup_steps, env.k)

    j_star = env.optimal_cost
    costs = np.zeros(spec.horizon)
    destabilized = False
    for t in range(spec.horizon):
        u = agent.control(x, agent_rng)
        out = step(env, x, u, env_rng)
        costs[t] = out.cost_incurred
        agent.observe(x, u, out.x_next)
        x = out.x_next
        if np.max(np.abs(x)) > BLOWUP_LIMIT:
            destabilized = True
            # Freeze the run: pad with the last cost so the trace keeps
            # its full length (and its outlier-sized regret) without
            # propagating infinities.
            costs[t + 1 :] = costs[t]
            break
    regret = np.cumsum(costs - j_star)
    return ExperimentTrace(
        env=env.name,
        algo=algo,
        seed=seed,
        instant_costs=costs,
        cumulative_regret=regret,
        destabilized=destabilized,
        ts_exhausted=int(agent.flags.get("ts_exhausted", 0)),
        wall_time=time.perf_counter() - t_start,
    )


def _seed_with_trajectory(agent, env, gain: GainPolicy, x, rng) -> np.ndarray:
    """Roll the stable controller for the warm-start dataset.

    Isotropic dither rides on the feedback: without it the seed inputs
    are an exact linear function of the states, the design matrix is
    rank-deficient in the input directions, and the first estimate of B
    is arbitrary.
    """
    transitions = []
    for _ in range(SEED_TRAJECTORY_STEPS):
        u = -gain.K @ x + SEED_DITHER_STD * rng.standard_normal(env.k)
        out = step(env, x, u, rng)
        transitions.append((x, u, out.x_next))
        x = out.x_next
    if hasattr(agent, "seed_design"):
        agent.seed_design(transitions)
    return x


def _run_job(args):
    spec, env, algo, seed = args
    return run_single(spec, env, algo, seed)


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> list[ExperimentTrace]:
    """All (algorithm, seed) runs for the spec, sorted deterministically."""
    env = resolve_environment(spec.env_name)
    jobs = [(spec, env, algo, seed) for algo in spec.algo_names for seed in range(spec.n_seeds)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(_run_job, jobs))
    else:
        traces = [_run_job(j) for j in jobs]
    traces.sort(key=lambda tr: (tr.env, tr.algo, tr.seed))
    return traces


def interquartile_mean(values) -> float:
    """Mean of the middle 50% with fractional weight on the boundary.

    For n samples, 0.25*n units of weight are removed from each end of
    the sorted sample; a sample straddling the cut keeps the leftover
    fraction.
    """
    x = np.sort(np.asarray(values, dtype=float))
    n = len(x)
    if n == 0:
        return float("nan")
    g = 0.25 * n
    w = np.ones(n)
    f = int(np.floor(g))
    frac = g - f
    if f > 0:
        w[:f] = 0.0
        w[n - f :] = 0.0
    if frac > 0:
        w[f] -= frac
        w[n - 1 - f] -= frac
    return float(np.sum(w * x) / np.sum(w))


def aggregate(traces: list[ExperimentTrace]) -> list[dict]:
    """Per (env, algo, t): IQM and quartiles of cumulative regret."""
    groups: dict[tuple[str, str], list[ExperimentTrace]] = {}
    for tr in traces:
        groups.setdefault((tr.env, tr.algo), []).append(tr)
    rows = []
    for (env_name, algo) in sorted(groups):
        members = groups[(env_name, algo)]
        stacked = np.vstack([tr.cumulative_regret for tr in members])
        n_destab = sum(tr.destabilized for tr in members)
        q25 = np.quantile(stacked, 0.25, axis=0)
        q75 = np.quantile(stacked, 0.75, axis=0)
        for t in range(stacked.shape[1]):
            rows.append(
                {
                    "env": env_name,
                    "algo": algo,
                    "t": t,
                    "iqm": interquartile_mean(stacked[:, t]),
                    "q25": float(q25[t]),
                    "q75": float(q75[t]),
                    "n_seeds": len(members),
                    "n_destabilized": n_destab,
                }
            )
    return rows


def emit_raw_csv(traces: list[ExperimentTrace], path) -> Path:
    """One record per step: env,algo,seed,t,instant_cost,cumulative_regret."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["env", "algo", "seed", "t", "instant_cost", "cumulative_regret"])
        for tr in traces:
            for t in range(len(tr.instant_costs)):
                writer.writerow(
                    [
                        tr.env,
                        tr.algo,
                        tr.seed,
                        t,
                        FLOAT_FMT % tr.instant_costs[t],
                        FLOAT_FMT % tr.cumulative_regret[t],
                    ]
                )
    return path


def emit_summary_csv(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = ["env", "algo", "t", "iqm", "q25", "q75", "n_seeds", "n_destabilized"]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            writer.writerow(
                [
                    row["env"],
                    row["algo"],
                    row["t"],
                    FLOAT_FMT % row["iqm"],
                    FLOAT_FMT % row["q25"],
                    FLOAT_FMT % row["q75"],
                    row["n_seeds"],
                    row["n_destabilized"],
                ]
            )
    return path


def landscape_dump(
    env_a: Environment, env_b: Environment, grid_size: int, path
) -> Path:
    """Sample the cost gap along the segment between two parameterizations.

    Rows carry kind=grid for the alpha sweep (empty gap at unstable
    points) and kind=root_exact / root_taylor for the two solvers'
    roots (gap column holds the residual there).
    """
    problem = InterpolationProblem.from_endpoints(
        env_a.theta_true, env_b.theta_true, env_a.cost
    )
    cost = env_a.cost
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    from .control_core import closed_loop
    from .divergence import interpolate

    rows = []
    for alpha in np.linspace(0.0, 1.0, grid_size):
        th = interpolate(problem, float(alpha))
        stable_k = closed_loop(th, problem.gain.K).stabilizing
        stable_kp = closed_loop(th, problem.gain_prime.K).stabilizing
        gap_txt = ""
        if stable_k and stable_kp:
            gap_txt = FLOAT_FMT % cost_gap(problem, float(alpha), cost)
        rows.append(["grid", FLOAT_FMT % alpha, gap_txt, int(stable_k), int(stable_kp)])
    exact = find_root_exact(problem, cost, tol=1e-10)
    rows.append(
        ["root_exact", FLOAT_FMT % exact.alpha_star, FLOAT_FMT % exact.residual, 1, 1]
    )
    try:
        taylor = find_root_taylor(problem, cost)
    except UnstableClosedLoopError:
        taylor = None
    if taylor is not None:
        rows.append(
            ["root_taylor", FLOAT_FMT % taylor.alpha_star, FLOAT_FMT % taylor.residual, 1, 1]
        )
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "alpha", "gap", "stable_K", "stable_Kprime"])
        writer.writerows(rows)
    return path


def sample_size_study(
    env_name: str,
    sizes: list[int],
    n_seeds: int,
    horizon: int,
    base_seed: int = 0,
    agent_config: MedLqConfig | None = None,
    workers: int = 1,
) -> list[dict]:
    """Final regret and wall time of the divergence-weighted agent as a
    function of its candidate count."""
    if not sizes:
        raise ValueError("sizes must be nonempty")
    cfg0 = agent_config or MedLqConfig()
    rows = []
    for n in sizes:
        spec = ExperimentSpec(
            env_name=env_name,
            algo_names=("medlq",),
            horizon=horizon,
            n_seeds=n_seeds,
            base_seed=base_seed,
            agent_config=replace(cfg0, n_candidates=int(n)),
        )
        traces = run_experiment(spec, workers=workers)
        finals = [tr.cumulative_regret[-1] for tr in traces]
        times = [tr.wall_time for tr in traces]
        rows.append(
            {
                "env": traces[0].env,
                "algo": "medlq",
                "t": horizon - 1,
                "iqm": interquartile_mean(finals),
                "q25": float(np.quantile(finals, 0.25)),
                "q75": float(np.quantile(finals, 0.75)),
                "n_seeds": n_seeds,
                "n_destabilized": sum(tr.destabilized for tr in traces),
                "n": int(n),
                "wall_time_iqm": interquartile_mean(times),
            }
        )
    return rows


def emit_study_csv(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = [
        "env", "algo", "t", "iqm", "q25", "q75",
        "n_seeds", "n_destabilized", "n", "wall_time_iqm",
    ]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            writer.writerow(
                [
                    row["env"], row["algo"], row["t"],
                    FLOAT_FMT % row["iqm"], FLOAT_FMT % row["q25"], FLOAT_FMT % row["q75"],
                    row["n_seeds"], row["n_destabilized"], row["n"],
                    FLOAT_FMT % row["wall_time_iqm"],
                ]
            )
    return path
