"""Report figures rendered to image files with the non-interactive backend."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def objective_trace(trace, path, title="training objective"):
    """Per-epoch objective of the accepted run."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(np.arange(1, len(trace) + 1), trace, lw=1.5)
    ax.set_xlabel("epoch")
    ax.set_ylabel("objective")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def assignment_scatter(features, assignments, path, labels=None, title="assignments"):
    """Points coloured by discrete output; a second panel shows labels if given.

    Only the first two feature columns are drawn.
    """
    X = np.asarray(features, dtype=np.float64)
    panels = [(np.asarray(assignments), title)]
    if labels is not None:
        panels.append((np.asarray(labels), "labels"))
    fig, axes = plt.subplots(1, len(panels), figsize=(4.2 * len(panels), 4), squeeze=False)
    for ax, (colour, name) in zip(axes[0], panels):
        _, colour = np.unique(colour, return_inverse=True)
        ax.scatter(X[:, 0], X[:, 1], c=colour, s=5, cmap="tab20")
        ax.set_title(name)
        ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def cluster_sizes(assignments, path, n_clusters=None):
    counts = np.bincount(np.asarray(assignments, dtype=np.int64), minlength=n_clusters or 0)
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar(np.arange(len(counts)), counts)
    ax.set_xlabel("cluster")
    ax.set_ylabel("points")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
