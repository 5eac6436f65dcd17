"""Convergence figures: median R-hat versus sample count and wall time.

Figures are rendered with matplotlib to SVG files, with the underlying
curve data written alongside as CSV so plots can be regenerated or restyled
without rerunning any sampler.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .diagnostics import RHAT_THRESHOLD

__all__ = ["emit_plots", "load_curve_csv", "convergence_figure"]


def load_curve_csv(path):
    """Read a ``method,prefix_samples,wall_time_s,median_r_hat`` curve file.

    Returns ``{method: (samples, rhats, times)}`` (a file may hold several
    methods' curves).
    """
    curves: dict = {}
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != ["method", "prefix_samples", "wall_time_s", "median_r_hat"]:
            raise ValueError(f"unexpected curve header in {path}")
        for line in fh:
            if not line.strip():
                continue
            method, p, t, r = line.strip().split(",")
            curves.setdefault(method, []).append((int(p), float(r), float(t)))
    return {
        m: (np.array([v[0] for v in rows]),
            np.array([v[1] for v in rows]),
            np.array([v[2] for v in rows]))
        for m, rows in curves.items()
    }


def convergence_figure(curves, x_index=0, xlabel="samples"):
    """Build the median-R-hat figure (one line per method plus the dashed
    threshold line); returns ``(fig, ax)``."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for method in sorted(curves):
        samples, rhats, times = curves[method]
        x = samples if x_index == 0 else times
        ax.plot(x, rhats, label=method)
    ax.axhline(RHAT_THRESHOLD, linestyle="--", color="black", linewidth=0.8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("median R-hat")
    if curves:
        ax.set_xscale("log")
        ax.legend(frameon=False)
    fig.tight_layout()
    return fig, ax


def _render(curves, x_index, xlabel, path):
    fig, _ = convergence_figure(curves, x_index, xlabel)
    fig.savefig(path, format="svg")
    plt.close(fig)


def emit_plots(curves_by_method: dict, out_dir, stem: str = "convergence") -> dict:
    """Write R-hat-vs-samples and R-hat-vs-time SVGs plus the curve data CSV.

    ``curves_by_method`` maps method name to ``(samples, rhats, times)``
    arrays.  An empty mapping still produces valid SVGs (axes and threshold
    line only) and a header-only CSV.  Returns the written paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "samples_svg": out_dir / f"{stem}_samples.svg",
        "time_svg": out_dir / f"{stem}_time.svg",
        "data_csv": out_dir / f"{stem}_data.csv",
    }
    _render(curves_by_method, 0, "samples", paths["samples_svg"])
    _render(curves_by_method, 1, "wall time (s)", paths["time_svg"])
    with paths["data_csv"].open("w", newline="") as fh:
        fh.write("method,prefix_samples,wall_time_s,median_r_hat\n")
        for method in sorted(curves_by_method):
            samples, rhats, times = curves_by_method[method]
            for p, r, t in zip(samples, rhats, times):
                fh.write(f"{method},{int(p)},{repr(float(t))},{repr(float(r))}\n")
    return paths
