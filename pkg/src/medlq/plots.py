"""Figure rendering for benchmark reports.

Plots are generated strictly from the emitted CSV files, never from
in-memory state, so any external plotter can reproduce them from the
same delimited output.
"""

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def _read_csv(path):
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def plot_regret_summary(summary_csv, out_path) -> Path:
    """IQM cumulative-regret curves with interquartile bands, one panel
    per environment."""
    rows = _read_csv(summary_csv)
    by_env = defaultdict(lambda: defaultdict(list))
    for row in rows:
        by_env[row["env"]][row["algo"]].append(
            (int(row["t"]), float(row["iqm"]), float(row["q25"]), float(row["q75"]))
        )
    envs = sorted(by_env)
    fig, axes = plt.subplots(1, len(envs), figsize=(5.5 * len(envs), 4.0), squeeze=False)
    for ax, env_name in zip(axes[0], envs):
        for algo in sorted(by_env[env_name]):
            pts = sorted(by_env[env_name][algo])
            t = [p[0] for p in pts]
            iqm = [p[1] for p in pts]
            lo = [p[2] for p in pts]
            hi = [p[3] for p in pts]
            ax.plot(t, iqm, label=algo)
            ax.fill_between(t, lo, hi, alpha=0.2)
        ax.set_title(env_name)
        ax.set_xlabel("step")
        ax.set_ylabel("cumulative regret (IQM)")
        ax.legend()
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_landscape(landscape_csv, out_path) -> Path:
    """Cost-gap curve over alpha with the exact and fast-path roots marked."""
    rows = _read_csv(landscape_csv)
    alphas, gaps = [], []
    unstable = []
    roots = {}
    for row in rows:
        if row["kind"] == "grid":
            a = float(row["alpha"])
            if row["gap"]:
                alphas.append(a)
                gaps.append(float(row["gap"]))
            else:
                unstable.append(a)
        else:
            roots[row["kind"]] = float(row["alpha"])
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(alphas, gaps, marker=".", lw=1, label="cost gap")
    ax.axhline(0.0, color="k", lw=0.5)
    for a in unstable:
        ax.axvline(a, color="red", alpha=0.15, lw=2)
    markers = {"root_exact": ("o", "exact root"), "root_taylor": ("s", "quadratic root")}
    for kind, (marker, label) in markers.items():
        if kind in roots:
            ax.plot([roots[kind]], [0.0], marker=marker, ms=8, ls="", label=label)
    ax.set_xlabel("alpha")
    ax.set_ylabel("cost gap")
    ax.legend()
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_sample_size_study(study_csv, out_path) -> Path:
    """Final regret and wall time against the candidate count."""
    rows = _read_csv(study_csv)
    rows.sort(key=lambda r: int(r["n"]))
    ns = [int(r["n"]) for r in rows]
    iqm = [float(r["iqm"]) for r in rows]
    q25 = [float(r["q25"]) for r in rows]
    q75 = [float(r["q75"]) for r in rows]
    wt = [float(r["wall_time_iqm"]) for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 4.0))
    ax1.plot(ns, wt, marker="o")
    ax1.set_xscale("log", base=2)
    ax1.set_xlabel("candidate count")
    ax1.set_ylabel("wall time per run (IQM, s)")
    ax2.plot(ns, iqm, marker="o")
    ax2.fill_between(ns, q25, q75, alpha=0.2)
    ax2.set_xscale("log", base=2)
    ax2.set_xlabel("candidate count")
    ax2.set_ylabel("final regret (IQM)")
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
