"""Benchmark command line.

Subcommands:
  run        multi-seed regret benchmark, raw + summary CSV (+ figures)
  landscape  cost-gap sweep between two parameterizations
  study      candidate-count ablation for the divergence-weighted agent

Exit code 0 on success, nonzero with a diagnostic on spec errors.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .agents import MedLqConfig
from .bench import (
    ExperimentSpec,
    aggregate,
    emit_raw_csv,
    emit_study_csv,
    emit_summary_csv,
    landscape_dump,
    run_experiment,
    sample_size_study,
)
from .envs import resolve_environment
from .errors import MedLqError

_SCENARIO_ALIASES = {"stable-init": "stable_init", "auto-stab": "auto_stab"}


def _agent_config(raw: dict) -> MedLqConfig:
    known = {f.name for f in dataclasses.fields(MedLqConfig)}
    unknown = set(raw) - known
    if unknown:
        raise MedLqError(f"unknown agent_config fields: {sorted(unknown)}")
    return MedLqConfig(**raw)


def _spec_from_args(args) -> list[ExperimentSpec]:
    config = {}
    if args.config:
        config = json.loads(Path(args.config).read_text())
    env_names = config.get("envs") or ([config["env_name"]] if "env_name" in config else [])
    if args.env:
        env_names = args.env.split(",")
    if not env_names:
        raise MedLqError("no environment given (use --env or a config file)")
    algos = config.get("algos", ["medlq", "ofulq", "tslq"])
    if args.algos:
        algos = args.algos.split(",")
    scenario = config.get("scenario", "stable_init")
    if args.scenario:
        scenario = args.scenario
    scenario = _SCENARIO_ALIASES.get(scenario, scenario)
    cfg = _agent_config(config.get("agent_config", {}))
    fixed_gain = config.get("fixed_gain")
    if fixed_gain is not None:
        fixed_gain = np.array(fixed_gain, dtype=float)
    specs = []
    for env_name in env_names:
        specs.append(
            ExperimentSpec(
                env_name=env_name,
                algo_names=tuple(algos),
                horizon=args.horizon or int(config.get("horizon", 2000)),
                n_seeds=args.seeds or int(config.get("n_seeds", 16)),
                scenario=scenario,
                base_seed=args.base_seed if args.base_seed is not None else int(config.get("base_seed", 0)),
                agent_config=cfg,
                fixed_gain=fixed_gain,
                warmup_steps=int(config.get("warmup_steps", 35)),
            )
        )
    return specs


def _cmd_run(args) -> int:
    specs = _spec_from_args(args)
    out_dir = Path(args.out)
    all_traces = []
    for spec in specs:
        all_traces.extend(run_experiment(spec, workers=args.workers))
    raw_path = emit_raw_csv(all_traces, out_dir / "traces.csv")
    summary = aggregate(all_traces)
    summary_path = emit_summary_csv(summary, out_dir / "summary.csv")
    print(f"wrote {raw_path}")
    print(f"wrote {summary_path}")
    if args.plot:
        from .plots import plot_regret_summary

        fig_path = plot_regret_summary(summary_path, out_dir / "regret.png")
        print(f"wrote {fig_path}")
    return 0


def _cmd_landscape(args) -> int:
    env_a = resolve_environment(args.env_a)
    env_b = resolve_environment(args.env_b)
    out = Path(args.out)
    path = landscape_dump(env_a, env_b, args.grid, out)
    print(f"wrote {path}")
    if args.plot:
        from .plots import plot_landscape

        fig_path = plot_landscape(path, out.with_suffix(".png"))
        print(f"wrote {fig_path}")
    return 0


def _cmd_study(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    rows = sample_size_study(
        args.env,
        sizes,
        n_seeds=args.seeds,
        horizon=args.horizon,
        base_seed=args.base_seed or 0,
        workers=args.workers,
    )
    out_dir = Path(args.out)
    path = emit_study_csv(rows, out_dir / "study.csv")
    print(f"wrote {path}")
    if args.plot:
        from .plots import plot_sample_size_study

        fig_path = plot_sample_size_study(path, out_dir / "study.png")
        print(f"wrote {fig_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="multi-seed regret benchmark")
    run_p.add_argument("--config", help="JSON experiment config file")
    run_p.add_argument("--env", help="comma-separated environment names/files")
    run_p.add_argument("--algos", help="comma-separated algorithm names")
    run_p.add_argument("--scenario", choices=list(_SCENARIO_ALIASES) + ["stable_init", "auto_stab"])
    run_p.add_argument("--seeds", type=int, default=None)
    run_p.add_argument("--horizon", type=int, default=None)
    run_p.add_argument("--base-seed", type=int, default=None)
    run_p.add_argument("--out", required=True)
    run_p.add_argument("--workers", type=int, default=1)
    run_p.add_argument("--plot", action="store_true", help="also render figures")
    run_p.set_defaults(func=_cmd_run)

    land_p = sub.add_parser("landscape", help="cost-gap sweep between two systems")
    land_p.add_argument("--env-a", required=True)
    land_p.add_argument("--env-b", required=True)
    land_p.add_argument("--grid", type=int, default=101)
    land_p.add_argument("--out", required=True)
    land_p.add_argument("--plot", action="store_true")
    land_p.set_defaults(func=_cmd_landscape)

    study_p = sub.add_parser("study", help="candidate-count ablation")
    study_p.add_argument("--env", required=True)
    study_p.add_argument("--sizes", default="16,64,256")
    study_p.add_argument("--seeds", type=int, default=16)
    study_p.add_argument("--horizon", type=int, default=2000)
    study_p.add_argument("--base-seed", type=int, default=0)
    study_p.add_argument("--out", required=True)
    study_p.add_argument("--workers", type=int, default=1)
    study_p.add_argument("--plot", action="store_true")
    study_p.set_defaults(func=_cmd_study)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MedLqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
