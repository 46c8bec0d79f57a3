"""SVG figures written next to the CSV they are drawn from."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["bar_breakdown", "pareto_plot", "error_plot", "line_plot"]

plt.rcParams.update({
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.fonttype": "none",
    "svg.hashsalt": "hetvit",  # stable element ids
})


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def bar_breakdown(labels, values, path, ylabel="latency (s)", title=None, log=False):
    fig, ax = plt.subplots(figsize=(max(4.0, 0.45 * len(labels) + 1.5), 3.0))
    ax.bar(range(len(values)), values, color="#4c72b0")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_ylabel(ylabel)
    if log:
        ax.set_yscale("log")
    if title:
        ax.set_title(title)
    _save(fig, path)


def stacked_breakdown(groups, kinds, table, path, ylabel="latency (s)", title=None):
    """``table[g][k]``: value of kind ``k`` within group ``g``."""
    fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(groups) + 2.0), 3.2))
    bottom = np.zeros(len(groups))
    cmap = plt.get_cmap("tab20")
    for n, k in enumerate(kinds):
        vals = np.array([table[g].get(k, 0.0) for g in groups])
        ax.bar(range(len(groups)), vals, bottom=bottom, label=k, color=cmap(n % 20))
        bottom += vals
    ax.set_xticks(range(len(groups)))
    ax.set_xticklabels(groups, rotation=30, ha="right")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=7, frameon=False, ncol=2)
    if title:
        ax.set_title(title)
    _save(fig, path)


def pareto_plot(latency, accuracy, labels, path, ref=None):
    """Accuracy vs estimated latency; ``ref`` = [(name, lat, acc)] drawn as crosses."""
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    order = np.argsort(latency)
    ax.plot(np.asarray(latency)[order], np.asarray(accuracy)[order], "o-", color="#c44e52", label="searched")
    for x, y, s in zip(latency, accuracy, labels):
        ax.annotate(s, (x, y), textcoords="offset points", xytext=(4, 4), fontsize=7)
    for name, x, y in ref or []:
        ax.plot([x], [y], "x", ms=7, label=name)
    ax.set_xlabel("estimated latency (s)")
    ax.set_ylabel("eval accuracy")
    ax.legend(frameon=False, fontsize=7)
    _save(fig, path)


def error_plot(variances, err_sm, err_rs, path):
    fig, ax = plt.subplots(figsize=(4.0, 3.0))
    ax.plot(variances, err_sm, "o-", label="softmax")
    ax.plot(variances, err_rs, "s-", label="ReLU softmax")
    ax.set_xlabel("logit variance")
    ax.set_ylabel("mean relative error")
    ax.set_yscale("log")
    ax.legend(frameon=False)
    _save(fig, path)


def line_plot(x, ys: dict, path, xlabel="epoch", ylabel=""):
    fig, ax = plt.subplots(figsize=(4.0, 3.0))
    for k, y in ys.items():
        ax.plot(x, y, label=k)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(frameon=False, fontsize=7)
    _save(fig, path)
