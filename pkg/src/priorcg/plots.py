"""Figure rendering for the CLI report paths.

Every function takes data the delimited outputs already carry and
writes one PNG next to them; nothing here feeds back into the
computations. The Agg backend is forced so runs work headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_error_trace_plot(path, traces, metric="rel_coord_error",
                          title=None) -> None:
    """Overlay one error metric per labelled trace, log-scaled.

    ``traces`` maps a label (usually the preconditioner name) to an
    object with per-iteration metric arrays.
    """
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, trace in traces.items():
        values = np.asarray(getattr(trace, metric), dtype=np.float64)
        shown = np.where(values > 0, values, np.nan)
        ax.semilogy(np.arange(values.size), shown, label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel(metric.replace("_", " "))
    if title:
        ax.set_title(title)
    ax.legend()
    _finish(fig, path)


def save_spectrum_plot(path, report, title=None) -> None:
    """Histogram of log10 eigenvalues using the report's fixed bins."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    widths = np.diff(report.bin_edges)
    ax.bar(report.bin_edges[:-1], report.counts, width=widths,
           align="edge", edgecolor="black", linewidth=0.4)
    ax.set_xlabel("log10 eigenvalue")
    ax.set_ylabel("count")
    if title:
        ax.set_title(title)
    _finish(fig, path)


def save_profile_plot(path, profile, title=None) -> None:
    """Sorted tau*lambda values relative to the largest one."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    rel = profile.relative_top
    ax.semilogy(np.arange(1, rel.size + 1), rel, marker=".", linestyle="none")
    ax.set_xlabel("rank")
    ax.set_ylabel("tau*lambda relative to max")
    if title:
        ax.set_title(title)
    _finish(fig, path)


def save_zscore_plot(path, z_scores, title=None) -> None:
    """Histogram of paired-chain z-scores with the N(0,1) reference."""
    z = np.asarray(z_scores, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.hist(z, bins=max(10, z.size // 5), density=True, alpha=0.7)
    grid = np.linspace(-4.0, 4.0, 201)
    ax.plot(grid, np.exp(-0.5 * grid**2) / np.sqrt(2 * np.pi), "k--",
            label="N(0,1)")
    ax.set_xlabel("standardized difference")
    ax.set_ylabel("density")
    if title:
        ax.set_title(title)
    ax.legend()
    _finish(fig, path)


def save_logdensity_plot(path, values, burn_in=0, title=None) -> None:
    """Log joint density per scan; the warmup cut is marked if present."""
    values = np.asarray(values, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(np.arange(1, values.size + 1), values, linewidth=0.8)
    if 0 < burn_in < values.size:
        ax.axvline(burn_in + 0.5, color="grey", linestyle=":")
    ax.set_xlabel("scan")
    ax.set_ylabel("log density")
    if title:
        ax.set_title(title)
    _finish(fig, path)
