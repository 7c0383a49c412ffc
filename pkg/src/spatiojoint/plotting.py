"""Figures written next to the CSV outputs of the command-line tools."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_population_curves(fe, path, span: float = 6.0, n: int = 200) -> Path:
    from .model import population_trajectory

    t = np.linspace(fe.t0 - span, fe.t0 + span, n)
    fig, ax = plt.subplots(figsize=(6, 4))
    for k in range(fe.n_outcomes):
        ax.plot(t, population_trajectory(fe, k, t), label=f"y_{k}")
    ax.axvline(fe.t0, color="grey", lw=0.8, ls=":")
    ax.set_xlabel("latent age (years)")
    ax.set_ylabel("normalised score")
    ax.set_ylim(0, 1)
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_patient_predictions(times, observed, pred_times, predicted, path, title: str = "") -> Path:
    """Observed visits (markers) and predicted curves (lines), one colour per outcome."""
    observed = np.atleast_2d(observed)
    predicted = np.atleast_2d(predicted)
    fig, ax = plt.subplots(figsize=(6, 4))
    for k in range(predicted.shape[1]):
        line, = ax.plot(pred_times, predicted[:, k], label=f"y_{k}")
        if len(times):
            ax.plot(times, observed[:, k], "o", color=line.get_color(), ms=4)
    ax.set_xlabel("time (years)")
    ax.set_ylabel("normalised score")
    ax.set_title(title)
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_event_curves(horizons, probabilities, path, title: str = "") -> Path:
    """Conditional event probabilities, ``probabilities`` is (len(horizons), L)."""
    probabilities = np.atleast_2d(probabilities)
    fig, ax = plt.subplots(figsize=(6, 4))
    for l in range(probabilities.shape[1]):
        ax.step(horizons, probabilities[:, l], where="post", label=f"event {l + 1}")
    ax.set_xlabel("horizon (years after last visit)")
    ax.set_ylabel("probability")
    ax.set_ylim(0, 1)
    ax.set_title(title)
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_traces(traces, names, path, burnin: int | None = None, max_panels: int = 12) -> Path:
    traces = np.asarray(traces)
    shown = names[:max_panels]
    cols = 3
    rows = int(np.ceil(len(shown) / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 2.2 * rows), squeeze=False)
    for ax, name, col in zip(axes.ravel(), shown, traces.T):
        ax.plot(np.arange(1, col.size + 1), col, lw=0.7)
        if burnin:
            ax.axvline(burnin, color="grey", lw=0.8, ls=":")
        ax.set_title(name, fontsize=9)
    for ax in axes.ravel()[len(shown):]:
        ax.axis("off")
    return _save(fig, path)


def plot_ree_boxplot(ree_by_parameter: dict, path) -> Path:
    fig, ax = plt.subplots(figsize=(max(6, 0.45 * len(ree_by_parameter)), 4))
    ax.boxplot(list(ree_by_parameter.values()), showfliers=False)
    ax.set_xticks(np.arange(1, len(ree_by_parameter) + 1), list(ree_by_parameter), rotation=60, fontsize=8)
    ax.axhline(0, color="grey", lw=0.8)
    ax.set_ylabel("relative estimation error (%)")
    return _save(fig, path)


def plot_bic(n_sources, bic, path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.plot(n_sources, bic, "o-")
    ax.set_xticks(list(n_sources))
    ax.set_xlabel("number of sources")
    ax.set_ylabel("extended BIC")
    return _save(fig, path)
