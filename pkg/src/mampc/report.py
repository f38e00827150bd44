"""Run artifacts: fixed-schema CSVs and the companion figures.

Floats are written with repr precision so a parsed CSV reproduces the run
bit-exactly. Figures are rendered next to the delimited output: per-step
controller latency colored by mode, the state trajectory, and the training
curve.
"""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .bench import SimReport, TimingStats
from .lqr import RoAValidation
from .policy_nn import LossCurve

_FLOAT_FMT = "%.17g"

MODE_COLORS = {"LQR": "tab:blue", "NN": "tab:green", "MPC": "tab:red",
               "LOOKUP": "tab:orange", "CONST": "tab:gray"}


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return _FLOAT_FMT % v
    return str(v)


def write_trajectory_csv(path, report: SimReport):
    """Columns: step, mode, x0.., u0.., step_ns (one row per control step)."""
    n = report.trajectory.shape[1]
    m = report.inputs.shape[1]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "mode"] + [f"x{i}" for i in range(n)]
                   + [f"u{i}" for i in range(m)] + ["step_ns"])
        for k in range(report.steps):
            w.writerow([k, report.modes[k]]
                       + [_fmt(v) for v in report.trajectory[k]]
                       + [_fmt(v) for v in report.inputs[k]]
                       + [report.per_step_ns[k]])


def read_trajectory_csv(path):
    """Parse back (modes, states, inputs, step_ns); floats round-trip exactly."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    header = rows[0]
    n = sum(1 for h in header if h.startswith("x"))
    m = sum(1 for h in header if h.startswith("u"))
    modes, xs, us, ns = [], [], [], []
    for row in rows[1:]:
        modes.append(row[1])
        xs.append([float(v) for v in row[2:2 + n]])
        us.append([float(v) for v in row[2 + n:2 + n + m]])
        ns.append(int(row[-1]))
    return modes, np.array(xs), np.array(us), ns


def write_timing_csv(path, stats: TimingStats):
    """Columns: mode, mean_ns, std_ns, time_div_pct, step_div_pct."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["mode", "mean_ns", "std_ns", "time_div_pct", "step_div_pct"])
        for mode, mean_ns, std_ns, _median, tdiv, sdiv in stats.rows():
            w.writerow([mode, _fmt(mean_ns), _fmt(std_ns), _fmt(tdiv), _fmt(sdiv)])


def write_roa_csv(path, report: RoAValidation):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["key", "value"])
        for key, value in report.rows():
            w.writerow([key, _fmt(value)])


def write_training_csv(path, curve: LossCurve):
    """Columns: epoch, train_mse, val_mse."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_mse", "val_mse"])
        for epoch, train, val in curve.rows():
            w.writerow([epoch, _fmt(train), _fmt(val)])


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def plot_per_step_time(path, report: SimReport, title: str = ""):
    fig, ax = plt.subplots(figsize=(7, 3.2))
    t_us = np.asarray(report.per_step_ns, dtype=float) / 1e3
    steps = np.arange(report.steps)
    for mode in report.mode_set():
        sel = [k for k in steps if report.modes[k] == mode]
        ax.semilogy([s for s in sel], t_us[sel], ".", ms=5,
                    color=MODE_COLORS.get(mode, "k"), label=mode)
    ax.set_xlabel("control step")
    ax.set_ylabel("controller time [µs]")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_trajectory(path, report: SimReport, tol: float = 0.01, title: str = ""):
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 4.6), sharex=True)
    norms = np.linalg.norm(report.trajectory, axis=1)
    steps = np.arange(len(norms))
    ax1.semilogy(steps, norms, "k-", lw=1)
    for mode in report.mode_set():
        sel = [k for k in range(report.steps) if report.modes[k] == mode]
        ax1.semilogy(sel, norms[sel], ".", ms=5,
                     color=MODE_COLORS.get(mode, "k"), label=mode)
    ax1.axhline(tol, color="gray", ls="--", lw=0.8)
    ax1.set_ylabel("||x||")
    ax1.legend(loc="upper right", fontsize=8)
    ax1.grid(alpha=0.3)
    for j in range(report.trajectory.shape[1]):
        ax2.plot(steps, report.trajectory[:, j], lw=0.9, label=f"x{j}")
    ax2.set_xlabel("control step")
    ax2.set_ylabel("state")
    if report.trajectory.shape[1] <= 6:
        ax2.legend(loc="upper right", fontsize=7, ncol=3)
    ax2.grid(alpha=0.3)
    if title:
        ax1.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_training_curve(path, curve: LossCurve, title: str = ""):
    fig, ax = plt.subplots(figsize=(6, 3.2))
    epochs = np.arange(len(curve.train_mse))
    ax.semilogy(epochs, curve.train_mse, label="train")
    ax.semilogy(epochs, curve.val_mse, label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_timing_comparison(path, stats_by_name: dict, title: str = ""):
    """Bar chart of per-mode mean step time for each timed controller."""
    fig, ax = plt.subplots(figsize=(6, 3.2))
    labels, values, colors = [], [], []
    for name, stats in stats_by_name.items():
        for mode, timing in stats.per_mode.items():
            labels.append(f"{name}\n{mode}")
            values.append(timing.mean_ns / 1e3)
            colors.append(MODE_COLORS.get(mode, "k"))
    pos = np.arange(len(labels))
    ax.bar(pos, values, color=colors)
    ax.set_yscale("log")
    ax.set_xticks(pos, labels, fontsize=7)
    ax.set_ylabel("mean step time [µs]")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_run_artifacts(out_dir, mampc_report: SimReport, timing_stats: dict,
                         curve: LossCurve | None, roa: RoAValidation | None,
                         tol: float, scenario: str = ""):
    """Write every CSV and figure for one closed-loop run into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(out / "trajectory.csv", mampc_report)
    if "mampc" in timing_stats:
        write_timing_csv(out / "timing.csv", timing_stats["mampc"][0])
    if curve is not None:
        write_training_csv(out / "training.csv", curve)
        plot_training_curve(out / "training_loss.png", curve, title=scenario)
    if roa is not None:
        write_roa_csv(out / "roa.csv", roa)
    plot_per_step_time(out / "per_step_time.png", mampc_report, title=scenario)
    plot_trajectory(out / "trajectory.png", mampc_report, tol=tol, title=scenario)
    if timing_stats:
        plot_timing_comparison(
            out / "timing_comparison.png",
            {name: st for name, (st, _rep) in timing_stats.items()},
            title=scenario)
