"""Figure rendering for command-line runs.

matplotlib is imported lazily inside each function so library users who
never ask for figures pay no import cost.  All output goes through the
Agg backend straight to PNG files; nothing here opens a window.
"""

import numpy as np


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def section_figure(path: str, x, p, title: str) -> str:
    """Stroboscopic section scatter, one dot per strobe."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7.0, 5.0), dpi=150)
    ax.plot(np.asarray(x), np.asarray(p), ",", color="#1f3a5f", alpha=0.6)
    ax.set_xlabel("x")
    ax.set_ylabel("p")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def trajectory_figure(path: str, t, x, p, title: str) -> str:
    plt = _pyplot()
    fig, axes = plt.subplots(2, 1, figsize=(7.0, 5.0), dpi=150, sharex=True)
    axes[0].plot(np.asarray(t), np.asarray(x), lw=0.7, color="#1f3a5f")
    axes[0].set_ylabel("x")
    axes[1].plot(np.asarray(t), np.asarray(p), lw=0.7, color="#7a3030")
    axes[1].set_ylabel("p")
    axes[1].set_xlabel("t")
    axes[0].set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def heatmap_figure(path: str, values: np.ndarray, extent, title: str,
                   diverging: bool = False) -> str:
    """Phase-space raster; `extent` is ((x_lo, x_hi), (p_lo, p_hi)).

    values[i, j] is the amplitude at (x_i, p_j), so the array is
    transposed for display with x horizontal and p vertical.
    """
    plt = _pyplot()
    a = np.asarray(values, dtype=float)
    fig, ax = plt.subplots(figsize=(6.4, 5.4), dpi=150)
    kwargs = {}
    if diverging:
        bound = float(np.abs(a).max()) or 1.0
        kwargs = {"cmap": "RdBu_r", "vmin": -bound, "vmax": bound}
    else:
        kwargs = {"cmap": "magma"}
    im = ax.imshow(a.T, origin="lower", aspect="auto",
                   extent=(extent[0][0], extent[0][1],
                           extent[1][0], extent[1][1]),
                   **kwargs)
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_xlabel("x")
    ax.set_ylabel("p")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def expectation_figure(path: str, t, means: dict, title: str) -> str:
    """Observable traces against time, one panel per named series."""
    plt = _pyplot()
    names = list(means)
    fig, axes = plt.subplots(len(names), 1, figsize=(7.0, 2.0 * len(names)),
                             dpi=150, sharex=True, squeeze=False)
    for ax, name in zip(axes[:, 0], names):
        ax.plot(np.asarray(t), np.asarray(means[name]), lw=0.9,
                color="#1f3a5f")
        ax.set_ylabel(name)
    axes[-1, 0].set_xlabel("t")
    axes[0, 0].set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def matrix_figure(path: str, magnitudes: np.ndarray, labels: list,
                  title: str) -> str:
    """History-by-history magnitude table as an annotated grid."""
    plt = _pyplot()
    a = np.asarray(magnitudes, dtype=float)
    n = a.shape[0]
    size = max(4.0, 0.55 * n)
    fig, ax = plt.subplots(figsize=(size + 1.2, size), dpi=150)
    im = ax.imshow(a, cmap="magma", vmin=0.0)
    fig.colorbar(im, ax=ax, shrink=0.85)
    ticks = np.arange(n)
    ax.set_xticks(ticks)
    ax.set_yticks(ticks)
    if n <= 32:
        ax.set_xticklabels(labels, rotation=90, fontsize=6)
        ax.set_yticklabels(labels, fontsize=6)
    else:
        ax.set_xticklabels([])
        ax.set_yticklabels([])
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
