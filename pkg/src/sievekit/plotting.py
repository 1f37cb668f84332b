"""Deterministic SVG figures.

Matplotlib writes a creation date and random clip-path ids into SVG output
unless told otherwise; both are pinned here so the same data always
produces the same bytes.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_RC = {"svg.hashsalt": "sievekit", "svg.fonttype": "path", "font.family": "DejaVu Sans"}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def convergence_plot(result, path) -> None:
    """Mean estimate (with 1.96 MC SE bars) against log10 n, one series per estimator, oracle as dashed lines."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        names = list(dict.fromkeys(s["estimator"] for s in result.summary))
        for i, name in enumerate(names):
            rows = [s for s in result.summary if s["estimator"] == name]
            x = [math.log10(s["n"]) for s in rows]
            y = [s["mean"] for s in rows]
            err = [1.96 * s["mc_se"] if math.isfinite(s["mc_se"]) else 0.0 for s in rows]
            color = f"C{i}"
            ax.errorbar(x, y, yerr=err, marker="o", color=color, label=name, capsize=3)
            ax.axhline(rows[0]["oracle"], color=color, linestyle="--", linewidth=0.8)
        ax.set_xlabel("log10 n")
        ax.set_ylabel("estimate")
        ax.set_title(result.scenario)
        ax.legend(fontsize=8)
        fig.tight_layout()
        _save(fig, path)


def incidence_plot(incidence, path) -> None:
    """Cumulative incidence of each cause by arm."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        k = list(range(1, incidence.K + 1))
        for j in (0, 1):
            for a, style in ((0, "-"), (1, "--")):
                ax.step(k, incidence.mu[j, :, a], where="post", linestyle=style, color=f"C{j}",
                        label=f"variant {j + 1}, arm {a}")
        ax.set_xlabel("interval")
        ax.set_ylabel("cumulative incidence")
        ax.legend(fontsize=8)
        fig.tight_layout()
        _save(fig, path)
