"""Figure rendering for report outputs.

Every report-producing command drops a PNG next to its delimited
output. All helpers are headless (Agg), take explicit data plus a
target path, and return the path they wrote.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_METHOD_COLORS = {"fnn": "#1f77b4", "plf": "#ff7f0e", "sbm": "#2ca02c"}


def _slot_labels(keys):
    return [f"{o}/d{d}" for o, d in keys]


def plot_simulation(report, path, title="Simulated overtime probability per slot"):
    keys = sorted(report.per_slot)
    probs = [report.per_slot[k]["overtime_prob"] for k in keys]
    fig, ax = plt.subplots(figsize=(max(6.0, 0.45 * len(keys)), 3.6))
    ax.bar(range(len(keys)), probs, color="#4c72b0")
    ax.axhline(report.threshold, color="crimson", linestyle="--", linewidth=1.2,
               label=f"threshold {report.threshold:g}")
    ax.set_xticks(range(len(keys)))
    ax.set_xticklabels(_slot_labels(keys), rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("P(overtime)")
    ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_comparison(kpis, path):
    """Grouped bars for the headline numbers of each method.

    kpis: {method: {"objective": .., "utilization": .., "avg_simulated_prob": ..,
                    "n_scheduled": ..}}
    """
    methods = list(kpis)
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.4))
    panels = [
        ("objective", "Objective"),
        ("utilization", "Utilization"),
        ("avg_simulated_prob", "Mean simulated P(overtime)"),
    ]
    for ax, (key, label) in zip(axes, panels):
        vals = [kpis[m].get(key, 0.0) for m in methods]
        colors = [_METHOD_COLORS.get(m, "#777777") for m in methods]
        ax.bar(methods, vals, color=colors)
        ax.set_title(label, fontsize=10)
        for i, v in enumerate(vals):
            ax.annotate(f"{v:.3g}", (i, v), ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_overtime_probs(per_method, threshold, path):
    """Constraint-implied and simulated per-slot probabilities side by side.

    per_method: {method: {"constraint": {slot: p}, "simulated": {slot: p}}}
    """
    methods = list(per_method)
    fig, axes = plt.subplots(len(methods), 1, figsize=(8, 2.6 * len(methods)),
                             sharex=True, squeeze=False)
    for ax, m in zip(axes[:, 0], methods):
        cons = per_method[m].get("constraint", {})
        sim = per_method[m].get("simulated", {})
        keys = sorted(set(cons) | set(sim))
        xs = np.arange(len(keys))
        width = 0.38
        ax.bar(xs - width / 2, [cons.get(k, 0.0) for k in keys], width,
               label="constraint", color=_METHOD_COLORS.get(m, "#777777"), alpha=0.85)
        ax.bar(xs + width / 2, [sim.get(k, 0.0) for k in keys], width,
               label="simulated", color="#999999")
        ax.axhline(threshold, color="crimson", linestyle="--", linewidth=1.0)
        ax.set_ylabel(m)
        ax.set_xticks(xs)
        ax.set_xticklabels(_slot_labels(keys), rotation=45, ha="right", fontsize=7)
        ax.legend(frameon=False, fontsize=7, ncol=2)
    axes[0, 0].set_title("Overtime probability: constraint model vs simulation")
    fig.tight_layout()
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_cross_feasibility(matrix, methods, path):
    """Heatmap of accepted-slot fractions; rows schedule, columns check."""
    data = np.array([[matrix[(r, c)] for c in methods] for r in methods])
    fig, ax = plt.subplots(figsize=(4.6, 3.8))
    im = ax.imshow(data, cmap="RdYlGn", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(len(methods)))
    ax.set_xticklabels(methods)
    ax.set_yticks(range(len(methods)))
    ax.set_yticklabels(methods)
    ax.set_xlabel("checked against")
    ax.set_ylabel("schedule from")
    for i in range(len(methods)):
        for j in range(len(methods)):
            ax.annotate(f"{data[i, j]:.2f}", (j, i), ha="center", va="center", fontsize=9)
    fig.colorbar(im, ax=ax, label="fraction of slots accepted")
    ax.set_title("Cross-method feasibility")
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_elbow(result, path):
    sizes = [s for s, _ in result.curve]
    objs = [v for _, v in result.curve]
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    ax.plot(sizes, objs, marker="o", color="#4c72b0")
    ax.axvline(result.chosen, color="crimson", linestyle="--", linewidth=1.2,
               label=f"chosen size {result.chosen}")
    ax.set_xlabel("reduced scenario count")
    ax.set_ylabel("objective")
    ax.set_title(f"Scenario-count scan (master {result.master_count})")
    ax.legend(frameon=False, fontsize=8)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_breakpoints(bp, path):
    xs = np.linspace(0.0, bp.x_max, 600) if bp.x_max > 0 else np.array([0.0])
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    ax.plot(xs, np.sqrt(xs), label="sqrt", color="#444444")
    ax.plot(bp.xs, bp.ys, marker="o", markersize=3.5, label=f"approx (delta={bp.delta:.3f})",
            color="#d62728", linewidth=1.0)
    ax.set_xlabel("total duration variance")
    ax.set_ylabel("standard deviation term")
    ax.set_title(f"{bp.n_points} breakpoints on [0, {bp.x_max:g}]")
    ax.legend(frameon=False, fontsize=8)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_case_outcomes(verdicts, path):
    """Allowed / rejected counts per method for capacity cases."""
    methods = sorted({v.method for v in verdicts})
    allowed = [sum(1 for v in verdicts if v.method == m and v.allowed) for m in methods]
    rejected = [sum(1 for v in verdicts if v.method == m and not v.allowed) for m in methods]
    xs = np.arange(len(methods))
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.bar(xs - 0.2, allowed, 0.4, label="allowed", color="#2ca02c")
    ax.bar(xs + 0.2, rejected, 0.4, label="rejected", color="#d62728")
    with_realized = [v for v in verdicts if v.realized_overtime is not None]
    if with_realized:
        n_over = sum(1 for v in with_realized if v.realized_overtime) / max(len(methods), 1)
        ax.axhline(n_over, color="#444444", linestyle=":", linewidth=1.0,
                   label="realized overtime days")
    ax.set_xticks(xs)
    ax.set_xticklabels(methods)
    ax.set_ylabel("cases")
    ax.set_title("Capacity-case verdicts")
    ax.legend(frameon=False, fontsize=8)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path
