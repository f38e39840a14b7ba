"""Learning-curve figures: evaluation reward and constraint against training steps."""

from __future__ import annotations

import json
import os

import matplotlib
from matplotlib.figure import Figure

from ..agents.io import read_metrics_csv

__all__ = ["emit_plots"]

_STYLE = {
    "svg.hashsalt": "rcpo",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.2,
}


def _alpha_near(path):
    summ = os.path.join(os.path.dirname(os.path.abspath(path)), "summary.json")
    try:
        with open(summ) as fh:
            return float(json.load(fh)["alpha"])
    except (OSError, ValueError, KeyError, TypeError):
        return None


def emit_plots(csv_paths, out_path, alpha=None, labels=None):
    """Two stacked panels, one curve per CSV, dashed line at the threshold.

    ``alpha`` defaults to the value in a ``summary.json`` next to the first
    CSV.  Output is deterministic for identical inputs (fixed hash salt, no
    date metadata).  The format follows the file extension.
    """
    csv_paths = list(csv_paths)
    if not csv_paths:
        raise ValueError("no metrics files to plot")
    if labels is not None and len(labels) != len(csv_paths):
        raise ValueError("need one label per metrics file")
    runs = [read_metrics_csv(p) for p in csv_paths]  # raises on schema mismatch
    if alpha is None:
        alpha = _alpha_near(csv_paths[0])
    labels = labels or [os.path.basename(os.path.dirname(os.path.abspath(p))) or p
                        for p in csv_paths]

    with matplotlib.rc_context(_STYLE):
        fig = Figure(figsize=(6.0, 5.0))
        ax_r, ax_c = fig.subplots(2, 1, sharex=True)
        for rows, label in zip(runs, labels):
            steps = [r.step for r in rows]
            ax_r.plot(steps, [r.eval_reward_mean for r in rows], label=label)
            ax_c.plot(steps, [r.eval_constraint_mean for r in rows], label=label)
        if alpha is not None:
            ax_c.axhline(alpha, color="k", linestyle="--", linewidth=1.0, label="threshold")
        ax_r.set_ylabel("evaluation reward")
        ax_c.set_ylabel("constraint")
        ax_c.set_xlabel("environment steps")
        ax_r.legend(loc="best", fontsize=7, frameon=False)
        fig.tight_layout()
        kw = {"metadata": {"Date": None}} if out_path.endswith(".svg") else {}
        fig.savefig(out_path, **kw)
    return out_path
