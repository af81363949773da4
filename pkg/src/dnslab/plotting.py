"""SVG rendering of empirical CDFs."""

from __future__ import annotations

import re
from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .stats import CdfSummary  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 4.0),
    "axes.linewidth": 0.6,
    "axes.grid": True,
    "grid.linewidth": 0.3,
    "font.size": 9,
    "legend.frameon": False,
    "path.simplify": False,        # keep every step so the curve can be read back
    "svg.hashsalt": "dnslab",
    "svg.fonttype": "none",
}


def line_id(label: str) -> str:
    return "cdf-" + re.sub(r"[^A-Za-z0-9_.-]+", "_", label)


def plot_cdfs(curves: Mapping[str, CdfSummary], path: str | Path, title: str = "",
              xlabel: str = "time (ms)", log_x: bool = False) -> Path:
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, summary in curves.items():
            xs = [x for x, _ in summary.points()]
            ys = [y for _, y in summary.points()]
            (line,) = ax.plot([xs[0]] + xs, [0.0] + ys, drawstyle="steps-post",
                              linewidth=1.0, label=label)
            line.set_gid(line_id(label))
        ax.set_xlabel(xlabel)
        ax.set_ylabel("cumulative fraction")
        ax.set_ylim(0, 1.02)
        if log_x:
            ax.set_xscale("log")
        if title:
            ax.set_title(title)
        if len(curves) > 1:
            ax.legend(loc="lower right", fontsize=7)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


_PATH_RE = re.compile(r'<g id="(cdf-[^"]+)">\s*<path d="([^"]+)"', re.S)
_NUM = re.compile(r"-?\d+(?:\.\d+)?(?:e-?\d+)?")


def read_svg_lines(path: str | Path) -> dict[str, list[tuple[float, float]]]:
    """Vertex lists of every CDF line in an SVG written by plot_cdfs (SVG coordinates)."""
    text = Path(path).read_text()
    lines = {}
    for gid, d in _PATH_RE.findall(text):
        nums = [float(n) for n in _NUM.findall(d)]
        lines[gid] = list(zip(nums[0::2], nums[1::2]))
    return lines
