"""SVG charts of a simulation trace, one file per signal and joint."""

from __future__ import annotations

import os
from io import StringIO

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .sim import atomic_write  # noqa: E402

_COLORS = ("tab:blue", "tab:orange")


def _chart(t, series, bounds, title, ylabel):
    fig, ax = plt.subplots(figsize=(7, 3.2))
    for (label, y), c in zip(series, _COLORS):
        ax.plot(t, y, lw=1.0, color=c, label=label)
    for b in bounds:
        ax.axhline(b, ls="--", lw=0.9, color="0.35")
    ax.set_title(title)
    ax.set_xlabel("t [s]")
    ax.set_ylabel(ylabel)
    if len(series) > 1:
        ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    buf = StringIO()
    fig.savefig(buf, format="svg")
    plt.close(fig)
    return buf.getvalue()


def plot_trace(trace, spec, out_dir, prefix=""):
    """Write q_i, v_i, u_i and barrier charts for each joint.

    Position, velocity and input charts carry their limits as dashed lines;
    barrier charts show b_up and b_low against the zero line.

    Returns:
        List of written paths.
    """
    os.makedirs(out_dir, exist_ok=True)
    t = trace.t
    paths = []
    for i in range(spec.n):
        j = i + 1
        items = [
            (f"q{j}", [(f"q{j}", trace.q[:, i])], [spec.q_min[i], spec.q_max[i]], "position"),
            (f"v{j}", [(f"v{j}", trace.v[:, i])], [-spec.v_max[i], spec.v_max[i]], "velocity"),
            (f"u{j}", [(f"u{j}", trace.u[:, i])], [-spec.u_max[i], spec.u_max[i]], "input"),
        ]
        if trace.b_up is not None and np.isfinite(trace.b_up).any():
            items.append((f"b{j}", [(f"b_up{j}", trace.b_up[:, i]), (f"b_low{j}", trace.b_low[:, i])],
                          [0.0], "barrier"))
        for name, series, bounds, ylabel in items:
            path = os.path.join(out_dir, f"{prefix}{name}.svg")
            atomic_write(path, _chart(t, series, bounds, name, ylabel))
            paths.append(path)
    return paths
