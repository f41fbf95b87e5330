"""Figure rendering for experiment results.

Renders alongside the delimited output: a conditional-coverage panel
(replicate-pooled bin coverage per method against the target) and a
marginal panel of per-method coverage and mean set size.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .experiment import ExperimentResult


def _style():
    plt.rcParams.update(
        {
            "figure.dpi": 120,
            "axes.grid": True,
            "grid.alpha": 0.3,
            "font.size": 9,
        }
    )


def save_conditional_coverage_figure(result: ExperimentResult, path: str | Path) -> Path:
    """Pooled conditional coverage against the covariate, per method."""
    _style()
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    target = 1.0 - result.config.alpha
    for method, summary in result.methods.items():
        filled = summary.bin_counts > 0
        ax.plot(
            summary.bin_centers[filled],
            summary.pooled_bin_coverage[filled],
            marker="o",
            markersize=3,
            label=method,
        )
    ax.axhline(target, color="black", linestyle="--", linewidth=1, label="target")
    ax.set_xlabel("covariate bin center")
    ax.set_ylabel("conditional coverage")
    ax.set_title(f"{result.config.scenario}: conditional coverage")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def save_summary_figure(result: ExperimentResult, path: str | Path) -> Path:
    """Per-method marginal coverage (with standard errors) and mean size."""
    _style()
    path = Path(path)
    methods = list(result.methods)
    positions = np.arange(len(methods))
    fig, (ax_cov, ax_size) = plt.subplots(1, 2, figsize=(7.5, 3.6))

    cov = [result.methods[m].coverage_mean for m in methods]
    cov_se = [result.methods[m].coverage_se for m in methods]
    ax_cov.errorbar(positions, cov, yerr=cov_se, fmt="o", capsize=3)
    ax_cov.axhline(
        1.0 - result.config.alpha, color="black", linestyle="--", linewidth=1
    )
    ax_cov.set_xticks(positions, methods, rotation=20)
    ax_cov.set_ylabel("coverage")
    ax_cov.set_title("marginal coverage")

    size = [result.methods[m].size_mean for m in methods]
    size_se = [result.methods[m].size_se for m in methods]
    ax_size.errorbar(positions, size, yerr=size_se, fmt="o", capsize=3, color="tab:red")
    ax_size.set_xticks(positions, methods, rotation=20)
    ax_size.set_ylabel("mean set size")
    ax_size.set_title("mean set size")

    fig.suptitle(f"{result.config.scenario}", y=1.02)
    fig.tight_layout()
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def save_figures(result: ExperimentResult, out_dir: str | Path) -> list[Path]:
    """Render all report figures into a directory."""
    out = Path(out_dir)
    return [
        save_conditional_coverage_figure(result, out / "conditional_coverage.png"),
        save_summary_figure(result, out / "summary.png"),
    ]
