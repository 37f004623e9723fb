"""Report figures rendered to PNG next to the CSV output."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return path


def plot_loss_curve(curve, path, title="pitch predictor"):
    """``curve`` rows are (step, train_loss, val_loss or None)."""
    steps = [r[0] for r in curve]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.semilogy(steps, [r[1] for r in curve], label="train")
    val = [(r[0], r[2]) for r in curve if r[2] is not None]
    if val:
        ax.semilogy(*zip(*val), "o-", label="validation")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def plot_probe_metrics(metrics_by_kind: dict, path):
    """``metrics_by_kind[kind]`` rows are (step, train_loss, probe_mse, jitter)."""
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for kind, rows in metrics_by_kind.items():
        steps = [r[0] for r in rows]
        a1.semilogy(steps, [r[2] for r in rows], "o-", label=kind)
        a2.plot(steps, [r[3] for r in rows], "o-", label=kind)
    a1.set_title("held-out probe MSE")
    a2.set_title("probe jitter")
    for a in (a1, a2):
        a.set_xlabel("step")
        a.legend()
    return _save(fig, path)


def plot_contours(utts, contours, path, max_utts=4):
    """Ground truth vs sampled contours for the first few utterances."""
    n = min(max_utts, len(utts))
    fig, axes = plt.subplots(n, 1, figsize=(7, 2.2 * n), squeeze=False)
    for ax, u, c in zip(axes[:, 0], utts, contours):
        v = u.contour.voiced
        t = np.arange(u.n_frames)
        ax.plot(t, np.where(v, u.contour.values, np.nan), ".", ms=3, label="observed")
        ax.plot(t, u.clean, "-", lw=1, label="clean")
        ax.plot(t, np.where(v, c, np.nan), "-", lw=1.2, label="sampled")
        ax.set_ylabel("Hz")
        ax.set_title(u.utt_id, fontsize=9)
    axes[0, 0].legend(fontsize=8)
    axes[-1, 0].set_xlabel("frame")
    return _save(fig, path)


def plot_schedule(schedule, path):
    t = np.arange(schedule.T + 1)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(t[1:], schedule.betas[1:], label="beta")
    ax.plot(t, schedule.alpha_bars, label="alpha_bar")
    ax.plot(t, schedule.posterior_vars, label="posterior var")
    ax.set_xlabel("t")
    ax.legend()
    return _save(fig, path)


def plot_ablation(rows, path):
    """Bar chart of per-arm means; rows are dicts from the ablation report."""
    arms = list(dict.fromkeys(r["arm"] for r in rows))
    metrics = ("voiced_rmse_hz", "diversity_hz", "probe_mse", "jitter")
    fig, axes = plt.subplots(1, len(metrics), figsize=(12, 3.2))
    for ax, m in zip(axes, metrics):
        vals = [np.mean([float(r[m]) for r in rows if r["arm"] == a]) for a in arms]
        ax.bar(arms, vals, color=["C0", "C1", "C2"][:len(arms)])
        ax.set_title(m, fontsize=9)
        ax.tick_params(axis="x", labelsize=7, rotation=20)
    return _save(fig, path)
