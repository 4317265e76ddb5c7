"""Static SVG figures with byte-stable output."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "svg.hashsalt": "pathgpa",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (5.0, 3.6),
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def embedding_scatter(z, stages, path_indices, severity, path):
    """2-D embedding coloured by stage, trajectory overlaid in order."""
    z = np.asarray(z)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        labels = np.asarray(stages)
        for k in np.unique(labels):
            sel = labels == k
            ax.scatter(z[sel, 0], z[sel, 1], s=22, label=f"stage {int(k)}")
        p = z[list(path_indices)]
        ax.plot(p[:, 0], p[:, 1], color="0.2", lw=1.0)
        ax.scatter(p[[0, -1], 0], p[[0, -1], 1], marker="x", color="k", s=40, label="endpoints")
        ax.set_xlabel("embedding 1")
        ax.set_ylabel("embedding 2")
        ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        return _save(fig, path)


def ranking_bars(names, scores, path, title="", top=10):
    scores = np.asarray(scores, dtype=float)
    n = min(top, len(scores))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.barh(np.arange(n)[::-1], scores[:n], color="0.35")
        ax.set_yticks(np.arange(n)[::-1])
        ax.set_yticklabels(names[:n], fontsize=7)
        ax.set_xlabel("score")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def diffusion_traces(traces, node_names, path, highlight=5):
    """Expected squared diffusion over simulated time, top nodes labelled."""
    traces = np.asarray(traces, dtype=float)
    order = np.argsort(-traces[-1], kind="stable")[:highlight]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(traces, color="0.8", lw=0.6)
        for i in order:
            ax.plot(traces[:, i], lw=1.2, label=node_names[i])
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("E |diffusion|^2")
        ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        return _save(fig, path)


def loss_curves(curves, path, ylabel="loss"):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for c in curves:
            ax.plot(c, lw=0.8)
        ax.set_xlabel("epoch")
        ax.set_ylabel(ylabel)
        fig.tight_layout()
        return _save(fig, path)
