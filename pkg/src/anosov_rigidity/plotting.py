"""Deterministic SVG line plots."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_RC = {"svg.hashsalt": "anosov-rigidity", "svg.fonttype": "path", "path.simplify": False}


def line_plot_svg(series, title: str, xlabel: str, ylabel: str, logy: bool = True,
                  tag: str = "") -> str:
    """Render ``series`` (name, xs, ys) tuples as SVG text.

    Non-positive values are dropped when ``logy`` is set. ``tag`` is written
    into the description metadata (used for the config hash)."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for name, xs, ys in series:
            pts = [(x, y) for x, y in zip(xs, ys) if not logy or y > 0]
            if not pts:
                continue
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=name)
        if logy:
            ax.set_yscale("log")
        ax.set_title(title)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if ax.get_legend_handles_labels()[0]:
            ax.legend(fontsize="small")
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None,
                                                 "Description": tag})
        plt.close(fig)
    return buf.getvalue()


def curves_svg(curves, title: str, tag: str = "") -> str:
    """Render (name, xs, ys) polylines on equal axes as SVG text."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.0, 5.0))
        for name, xs, ys in curves:
            ax.plot(xs, ys, label=name, linewidth=1.0)
        ax.set_aspect("equal")
        ax.set_title(title)
        ax.legend(fontsize="small")
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None,
                                                 "Description": tag})
        plt.close(fig)
    return buf.getvalue()
