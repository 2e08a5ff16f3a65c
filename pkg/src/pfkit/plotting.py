"""Figures for command reports, rendered to files with matplotlib's Agg backend.

matplotlib is imported on first use so the library and the non-plotting
commands never load it.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

from .report import Output

__all__ = ["render", "plot_script", "PLOT_SCRIPT", "PLOTTABLE"]

PLOTTABLE = ("solve", "solve-all", "loadability", "load-equivalent", "moment")


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _curves(table, x, y, group):
    out = defaultdict(lambda: ([], []))
    for r in table.records():
        xs, ys = out[r[group] if group else ""]
        xs.append(float(r[x]))
        ys.append(float(r[y]))
    return out


def render(out: Output, path: str | Path) -> Path:
    """Write the figure for ``out`` to ``path`` (format from the suffix)."""
    if out.command not in PLOTTABLE:
        raise ValueError(f"no figure is defined for {out.command!r}")
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4.5))
    try:
        if out.command == "loadability":
            for v, (xs, ys) in sorted(_curves(out.table("boundary"), "P_L", "Q_L", "V").items()):
                ax.plot(xs, ys, label=f"V = {v}")
            ax.set_xlabel("P_L (p.u.)")
            ax.set_ylabel("Q_L (p.u.)")
            ax.set_title("Loadability boundary")
            ax.legend()
        elif out.command == "load-equivalent":
            xs, ys = _curves(out.table("curve"), "V", "P", None)[""]
            ax.plot(xs, ys, ".", markersize=3)
            ax.set_xlabel("V (p.u.)")
            ax.set_ylabel("P (p.u.)")
            ax.set_title("Equivalent load curve")
        elif out.command == "solve-all":
            sols = out.table("solutions")
            cols = [c for c in sols.columns if c.startswith("Re(")]
            for r in sols.records():
                style = "o-" if r["real"] == "1" or r["real"] == 1 else "x:"
                ax.plot(range(len(cols)), [float(r[c]) for c in cols], style,
                        label=f"#{r['id']}")
            ax.set_xticks(range(len(cols)), [c[3:-1] for c in cols], rotation=45)
            ax.set_ylabel("real part")
            ax.set_title("Power-flow solutions (o real, x complex)")
        else:
            t = out.table("voltages") if out.has("voltages") else None
            if t is None:
                ax.text(0.5, 0.5, "no voltages extracted", ha="center", va="center")
            else:
                recs = t.records()
                ax.bar([str(r["bus"]) for r in recs], [float(r["abs_V"]) for r in recs])
                ax.set_xlabel("bus")
                ax.set_ylabel("|V| (p.u.)")
                ax.set_title("Bus voltage magnitudes")
        fig.tight_layout()
        path = Path(path)
        fig.savefig(path)
    finally:
        plt.close(fig)
    return path


PLOT_SCRIPT = '''\
"""Plot the first table of a pfkit CSV report.

usage: python {name} REPORT.csv [OUT.png]
"""
import csv
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

src = sys.argv[1] if len(sys.argv) > 1 else "{csv}"
dst = sys.argv[2] if len(sys.argv) > 2 else src.rsplit(".", 1)[0] + ".png"
tables, current = {{}}, None
with open(src) as fh:
    for line in fh:
        line = line.rstrip("\\n")
        if line.startswith("# table="):
            current = line[8:]
            tables[current] = []
        elif line.startswith("#") or not line.strip():
            continue
        elif current is not None:
            tables[current].append(next(csv.reader([line])))

name = "{table}" if "{table}" in tables else next(iter(tables))
header, *rows = tables[name]
x, y = {x}, {y}
fig, ax = plt.subplots()
ax.plot([float(r[x]) for r in rows], [float(r[y]) for r in rows], ".")
ax.set_xlabel(header[x])
ax.set_ylabel(header[y])
ax.set_title(name)
fig.savefig(dst)
print(dst)
'''

# table and column positions the emitted script plots for each command
SCRIPT_TARGET = {
    "solve": ("voltages", 0, 3),
    "solve-all": ("real_solutions", 1, 2),
    "loadability": ("boundary", 1, 2),
    "load-equivalent": ("curve", 0, 1),
    "moment": ("voltages", 0, 3),
}


def plot_script(command: str, csv_name: str, script_name: str) -> str:
    table, x, y = SCRIPT_TARGET[command]
    return PLOT_SCRIPT.format(name=script_name, csv=csv_name, table=table, x=x, y=y)
