"""Complexity-figure rendering from the benchmark harness's CSV reports."""

from .render import FigureSpec, main, read_rmse_table, read_slope_table, render_complexity_figure

__version__ = "0.1.0"
