"""Figure output. Only the gap-versus-n plot is drawn."""

from __future__ import annotations

import os
import tempfile

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_RC = {
    "svg.hashsalt": "pistop",
    "svg.fonttype": "path",
    "font.size": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def plot_gap(ns, gaps, path, *, title=r"$\tilde\pi_n(-1) - V^*_n(-1)$"):
    """Write a self-contained SVG of ``gap`` against ``n`` to ``path``."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.0, 3.8))
        ax.plot(ns, gaps, color="0.35", lw=0.8, zorder=1)
        ax.scatter(ns, gaps, s=9, color="C0", zorder=2)
        ax.set_xlabel("n")
        ax.set_ylabel("gap")
        ax.set_title(title)
        ax.set_ylim(bottom=0.0)
        ax.set_xlim(0, max(ns) + 1)
        fig.tight_layout()
        directory = os.path.dirname(os.path.abspath(path))
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".svg.tmp")
        os.close(fd)
        try:
            fig.savefig(tmp, format="svg", metadata={"Date": None})
            os.replace(tmp, path)
        finally:
            plt.close(fig)
            if os.path.exists(tmp):
                os.remove(tmp)
    return path
