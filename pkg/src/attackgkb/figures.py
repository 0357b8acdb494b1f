"""Render the technique-overlap report as a matplotlib figure."""

from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
from matplotlib.patches import Patch

from .analytics import TechniqueUsage
from .navigator import default_palette


def render_technique_figure(
    usages: Sequence[TechniqueUsage],
    n_groups: int,
    path: str,
    palette: Mapping[int, str] | None = None,
    title: str | None = None,
    max_rows: int = 40,
) -> str:
    """Save a horizontal bar chart of technique usage counts to `path`.

    Bars are shaded with the same tier palette as the Navigator layer; at
    most `max_rows` techniques are drawn, in priority order.
    """
    if palette is None:
        palette = default_palette(n_groups)
    rows = list(usages[:max_rows])
    rows.reverse()  # highest-priority technique on top

    height = max(2.0, 0.32 * len(rows) + 1.2)
    fig, ax = plt.subplots(figsize=(8, height))
    labels = [f"{u.attack_id}  {u.technique_name}".rstrip() for u in rows]
    counts = [u.count for u in rows]
    colors = [palette.get(u.count, "#999999") for u in rows]
    ax.barh(range(len(rows)), counts, color=colors, edgecolor="#444444", linewidth=0.4)
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels(labels, fontsize=8)
    ax.set_xlabel("groups using technique")
    ax.set_xticks(range(0, n_groups + 1))
    ax.set_xlim(0, max(n_groups, 1))
    if title:
        ax.set_title(title)
    handles = [
        Patch(facecolor=palette[tier], edgecolor="#444444",
              label=f"used by {tier} of {n_groups}")
        for tier in sorted(palette)
        if any(u.count == tier for u in usages)
    ]
    if handles:
        ax.legend(handles=handles, loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
