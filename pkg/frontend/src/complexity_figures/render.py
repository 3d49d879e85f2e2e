"""Render log-log cost-versus-RMSE complexity figures from CSV reports.

Consumes exactly two published file contracts and nothing else:

* the RMSE table ``estimator,epsilon,rmse,bias,stdev,mean_cost,n_replications``
* the slope report ``estimator,slope,intercept,n_points``

One curve per estimator is drawn on log-log axes with the RMSE axis
decreasing to the right, plus a dashed fitted power law per estimator.
The legend slope is the value read from the slope report, never
recomputed here.  Output is SVG or PNG, byte-deterministic for identical
inputs.

Usage::

    python -m complexity_figures --rmse rmse.csv --slopes slopes.csv \
        --out complexity.svg [--estimators standard,cv]
"""
from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "complexity-figures"

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

RMSE_COLUMNS = ("estimator", "epsilon", "rmse", "bias", "stdev",
                "mean_cost", "n_replications")
SLOPE_COLUMNS = ("estimator", "slope", "intercept", "n_points")

_MARKERS = ("o", "s", "^", "D", "v", "P")
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


class RenderError(Exception):
    """Bad inputs: missing files, missing columns, nonpositive values."""


@dataclass(frozen=True)
class FigureSpec:
    """What to render: input tables, estimator selection, output image."""

    rmse_path: Path
    slopes_path: Path
    out_path: Path
    estimators: tuple = ()   # empty means every estimator in the table
    title: str = "cost versus accuracy"


def _read_table(path: Path, expected_columns) -> list[dict]:
    try:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = tuple(reader.fieldnames or ())
            missing = [c for c in expected_columns if c not in header]
            if missing:
                raise RenderError(
                    f"{path} is missing required columns: {', '.join(missing)}"
                )
            return list(reader)
    except OSError as exc:
        raise RenderError(f"cannot read {path}: {exc}") from exc


def read_rmse_table(path: Path) -> dict[str, list[tuple[float, float]]]:
    """Per-estimator (rmse, cost) points, in file order."""
    points: dict[str, list[tuple[float, float]]] = {}
    for row in _read_table(path, RMSE_COLUMNS):
        rmse = float(row["rmse"])
        cost = float(row["mean_cost"])
        if rmse <= 0.0 or cost <= 0.0:
            raise RenderError(
                f"nonpositive rmse/cost for estimator {row['estimator']!r} "
                f"at epsilon {row['epsilon']}: rmse={rmse}, cost={cost}"
            )
        points.setdefault(row["estimator"], []).append((rmse, cost))
    return points


def read_slope_table(path: Path) -> dict[str, tuple[float, float]]:
    """Per-estimator (slope, intercept) from the slope report."""
    return {
        row["estimator"]: (float(row["slope"]), float(row["intercept"]))
        for row in _read_table(path, SLOPE_COLUMNS)
    }


def render_complexity_figure(spec: FigureSpec) -> Path:
    """Render the figure and return the output path."""
    points = read_rmse_table(spec.rmse_path)
    slopes = read_slope_table(spec.slopes_path)

    names = list(spec.estimators) if spec.estimators else sorted(points)
    if not names:
        raise RenderError("no estimators selected")
    for name in names:
        if name not in points:
            raise RenderError(f"estimator {name!r} not present in {spec.rmse_path}")
        if len(points[name]) < 2:
            raise RenderError(f"estimator {name!r} has fewer than 2 points")

    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    for i, name in enumerate(names):
        pts = sorted(points[name], reverse=True)  # RMSE decreasing rightward
        rmse = [p[0] for p in pts]
        cost = [p[1] for p in pts]
        color = _COLORS[i % len(_COLORS)]
        label = name
        if name in slopes:
            slope, intercept = slopes[name]
            label = f"{name}: cost ~ RMSE^-{slope:.3f}"
            import math
            fitted = [math.exp(intercept) * r ** (-slope) for r in rmse]
            ax.plot(rmse, fitted, linestyle="--", linewidth=1.0, color=color,
                    alpha=0.7)
        ax.plot(rmse, cost, marker=_MARKERS[i % len(_MARKERS)], linestyle="-",
                color=color, label=label)

    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.invert_xaxis()  # accuracy improves to the right
    ax.set_xlabel("RMSE (decreasing)")
    ax.set_ylabel("cost")
    ax.set_title(spec.title)
    ax.legend()
    ax.grid(True, which="both", linewidth=0.3, alpha=0.5)
    fig.tight_layout()
    spec.out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(spec.out_path, metadata=_deterministic_metadata(spec.out_path))
    plt.close(fig)
    return spec.out_path


def _deterministic_metadata(out_path: Path) -> dict | None:
    suffix = out_path.suffix.lower()
    if suffix == ".svg":
        return {"Date": None}  # drop the embedded timestamp
    if suffix == ".png":
        return {"Software": "complexity-figures"}
    return None


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="complexity-figures",
        description="Render a log-log cost-vs-RMSE figure from CSV reports.",
    )
    parser.add_argument("--rmse", required=True, type=Path,
                        help="RMSE table CSV from the benchmark harness")
    parser.add_argument("--slopes", required=True, type=Path,
                        help="slope report CSV from the benchmark harness")
    parser.add_argument("--out", required=True, type=Path,
                        help="output image path (.svg or .png)")
    parser.add_argument("--estimators", default="",
                        help="comma-separated subset to overlay (default: all)")
    parser.add_argument("--title", default="cost versus accuracy")
    args = parser.parse_args(argv)
    selected = tuple(s.strip() for s in args.estimators.split(",") if s.strip())
    spec = FigureSpec(rmse_path=args.rmse, slopes_path=args.slopes,
                      out_path=args.out, estimators=selected, title=args.title)
    try:
        out = render_complexity_figure(spec)
    except RenderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
