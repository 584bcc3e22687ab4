"""Figure rendering for the report path.

Every CLI report command writes its delimited output first and, unless
figures are disabled, a PNG rendering of the same data next to it. All
plotting uses the Agg backend so reports work on headless machines.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from ..regulatable import MIXED, NON_NEGATIVE, NON_POSITIVE
from ..simulator import STATE_VAR_NAMES

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22")


def _finish(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def learning_curves(aggregate_rows, path, title="Average delay per episode"):
    """Mean avg-delay per episode with shaded confidence bands."""
    fig, ax = plt.subplots(figsize=(7, 4.2))
    controllers = sorted({a.controller for a in aggregate_rows})
    for k, name in enumerate(controllers):
        rows = sorted((a for a in aggregate_rows if a.controller == name),
                      key=lambda a: a.episode)
        x = [a.episode for a in rows]
        y = [a.mean for a in rows]
        color = _COLORS[k % len(_COLORS)]
        ax.plot(x, y, label=name, color=color, marker="o", markersize=3)
        if all(a.ci_low is not None for a in rows):
            ax.fill_between(x, [a.ci_low for a in rows],
                            [a.ci_high for a in rows],
                            color=color, alpha=0.18, linewidth=0)
    ax.set_xlabel("training episode")
    ax.set_ylabel("average delay (s/veh)")
    ax.set_title(title)
    ax.legend(frameon=False)
    ax.grid(alpha=0.25)
    return _finish(fig, path)


def comparison_bars(comparison, path):
    """Final-episode mean delay of candidate vs baseline."""
    fig, ax = plt.subplots(figsize=(5, 4))
    names = [comparison.candidate, comparison.baseline]
    values = [comparison.candidate_mean, comparison.baseline_mean]
    ax.bar(names, values, color=[_COLORS[0], _COLORS[1]], width=0.5)
    for i, v in enumerate(values):
        ax.text(i, v, f"{v:.1f}", ha="center", va="bottom")
    if comparison.percent_reduction is not None:
        ax.set_title(f"delay reduction: {comparison.percent_reduction:.1f}%")
    else:
        ax.set_title("delay reduction undefined (zero baseline)")
    ax.set_ylabel("final-episode average delay (s/veh)")
    ax.grid(axis="y", alpha=0.25)
    return _finish(fig, path)


_VERDICT_CODE = {NON_NEGATIVE: 1.0, NON_POSITIVE: -1.0, MIXED: 0.0}


def audit_heatmap(verdicts, layout, path):
    """Sign map of the precedence response to each state variable."""
    rows = []
    labels = []
    for combo in layout.combos:
        for slot, pid in enumerate(combo.phases):
            rows.append([_VERDICT_CODE[verdicts[(combo.combo_index, slot, i)]]
                         for i in range(6)])
            labels.append(f"combo {combo.combo_index} / phase {pid}")
    data = np.asarray(rows)
    fig, ax = plt.subplots(figsize=(7, 0.4 * len(rows) + 1.8))
    im = ax.imshow(data, cmap="RdYlGn", vmin=-1, vmax=1, aspect="auto")
    ax.set_xticks(range(6), STATE_VAR_NAMES, rotation=30, ha="right")
    ax.set_yticks(range(len(labels)), labels)
    cbar = fig.colorbar(im, ax=ax, ticks=[-1, 0, 1])
    cbar.ax.set_yticklabels(["non-positive", "mixed", "non-negative"])
    ax.set_title("monotone response audit")
    return _finish(fig, path)


def explain_bars(report, layout, path):
    """Per-variable precedence contributions for chosen (and previous) combo."""
    chosen = report.winner
    panels = [("chosen", chosen)]
    if report.previous is not None and report.previous != chosen:
        panels.append(("previous", report.previous))
    fig, axes = plt.subplots(len(panels), 1,
                             figsize=(8, 3.2 * len(panels)), squeeze=False)
    for ax, (role, combo_idx) in zip(axes[:, 0], panels):
        combo = layout.combos[combo_idx]
        terms = (report.terms[combo_idx] * report.flag_factors[combo_idx]).ravel()
        labels = [f"{layout.phase_by_id(pid).movement}\n{STATE_VAR_NAMES[i]}"
                  for pid in combo.phases for i in range(6)]
        x = np.arange(len(terms))
        color = _COLORS[0] if role == "chosen" else _COLORS[1]
        ax.bar(x, terms, 0.6, color=color)
        ax.set_xticks(x, labels, fontsize=7)
        ax.set_ylabel("contribution")
        ax.set_title(f"{role} combo {combo_idx} "
                     f"(g = {report.values[combo_idx]:.2f})")
        ax.grid(axis="y", alpha=0.25)
    return _finish(fig, path)
