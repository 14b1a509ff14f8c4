"""Figure rendering for the CLI report paths.

Kept out of the solver library proper: only the CLI imports this module.
All functions write PNG files next to the delimited reports.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .model import PHASES


def save_phase_power(aggregate: np.ndarray, step_hours: float, path, title: str) -> None:
    """Stacked per-phase aggregate power over the horizon."""
    t = aggregate.shape[1]
    hours = np.arange(t) * step_hours
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for m, label in enumerate(PHASES):
        ax.step(hours, aggregate[m], where="post", label=label)
    ax.set_xlabel("hour")
    ax.set_ylabel("aggregate power (kW)")
    ax.set_title(title)
    ax.legend(title="phase")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_sweep(rows: list[dict], path) -> None:
    """Satisfaction-vs-capacity curves, one line per strategy."""
    strategies = sorted({r["strategy"] for r in rows})
    fig, ax = plt.subplots(figsize=(6, 4))
    for strat in strategies:
        pts = sorted(
            (r["c1"], r["satisfaction_rate"]) for r in rows if r["strategy"] == strat
        )
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=strat)
    ax.set_xlabel("secondary line limit c1 (kW)")
    ax.set_ylabel("demand satisfaction rate")
    ax.set_ylim(0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_compare(rows: list[dict], path) -> None:
    """Mean unmet energy per strategy across episodes."""
    strategies = sorted({r["strategy"] for r in rows})
    means = [
        np.mean([r["unmet_kwh"] for r in rows if r["strategy"] == s])
        for s in strategies
    ]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(strategies, means)
    ax.set_ylabel("mean unmet energy (kWh)")
    ax.set_xlabel("strategy")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
