import math
import xml.etree.ElementTree as ET
from pathlib import Path

import pytest

from complexity_figures.render import (
    FigureSpec,
    RenderError,
    main,
    read_rmse_table,
    read_slope_table,
    render_complexity_figure,
)

RMSE_HEADER = "estimator,epsilon,rmse,bias,stdev,mean_cost,n_replications\n"
SLOPE_HEADER = "estimator,slope,intercept,n_points\n"


def write_power_law(tmp_path, slope=2.0, estimators=("standard",)):
    """Exact power-law tables: cost = rmse^-slope, slope report to match."""
    rmse_lines = [RMSE_HEADER]
    slope_lines = [SLOPE_HEADER]
    for name in estimators:
        rmses = [0.5 ** i for i in range(1, 5)]
        for eps, r in zip((0.25, 0.125, 0.0625, 0.03125), rmses):
            cost = r ** -slope
            rmse_lines.append(f"{name},{eps},{r},0.0,{r},{cost},50\n")
        slope_lines.append(f"{name},{slope},0.0,4\n")
    rmse_path = tmp_path / "rmse.csv"
    slopes_path = tmp_path / "slopes.csv"
    rmse_path.write_text("".join(rmse_lines))
    slopes_path.write_text("".join(slope_lines))
    return rmse_path, slopes_path


def svg_text(path: Path) -> str:
    return path.read_text(encoding="utf-8")


class TestTables:
    def test_reads_points_per_estimator(self, tmp_path):
        rmse_path, slopes_path = write_power_law(tmp_path,
                                                 estimators=("a", "b"))
        points = read_rmse_table(rmse_path)
        assert set(points) == {"a", "b"}
        assert len(points["a"]) == 4
        slopes = read_slope_table(slopes_path)
        assert slopes["a"][0] == 2.0

    def test_missing_columns_named(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("estimator,rmse\nstandard,0.5\n")
        with pytest.raises(RenderError, match="mean_cost"):
            read_rmse_table(bad)

    def test_nonpositive_values_refused(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text(RMSE_HEADER + "standard,0.25,-0.5,0,0.5,100,50\n")
        with pytest.raises(RenderError, match="nonpositive"):
            read_rmse_table(bad)


class TestRendering:
    def test_power_law_figure_has_matching_legend_slope(self, tmp_path):
        rmse_path, slopes_path = write_power_law(tmp_path, slope=2.0)
        out = tmp_path / "fig.svg"
        spec = FigureSpec(rmse_path=rmse_path, slopes_path=slopes_path,
                          out_path=out)
        assert render_complexity_figure(spec) == out
        text = svg_text(out)
        # the legend label carries the slope read from the report,
        # printed to three decimals
        assert "RMSE^-2.000" in text

    def test_three_estimator_overlay(self, tmp_path):
        rmse_path, slopes_path = write_power_law(
            tmp_path, estimators=("standard", "cv", "multilevel"))
        out = tmp_path / "fig.svg"
        render_complexity_figure(FigureSpec(rmse_path=rmse_path,
                                            slopes_path=slopes_path,
                                            out_path=out))
        text = svg_text(out)
        for name in ("standard", "cv", "multilevel"):
            assert name in text

    def test_empty_selection_rejected(self, tmp_path):
        rmse_path, slopes_path = write_power_law(tmp_path)
        with pytest.raises(RenderError, match="not present"):
            render_complexity_figure(FigureSpec(rmse_path=rmse_path,
                                                slopes_path=slopes_path,
                                                out_path=tmp_path / "f.svg",
                                                estimators=("missing",)))

    def test_single_point_estimator_rejected(self, tmp_path):
        _, slopes_path = write_power_law(tmp_path)
        rmse_path = tmp_path / "thin.csv"
        rmse_path.write_text(RMSE_HEADER + "standard,0.25,0.5,0,0.5,16,50\n")
        with pytest.raises(RenderError, match="fewer than 2"):
            render_complexity_figure(FigureSpec(rmse_path=rmse_path,
                                                slopes_path=slopes_path,
                                                out_path=tmp_path / "f.svg"))

    def test_png_output(self, tmp_path):
        rmse_path, slopes_path = write_power_law(tmp_path)
        out = tmp_path / "fig.png"
        render_complexity_figure(FigureSpec(rmse_path=rmse_path,
                                            slopes_path=slopes_path,
                                            out_path=out))
        assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_deterministic_svg_bytes(self, tmp_path):
        rmse_path, slopes_path = write_power_law(tmp_path)
        a, b = tmp_path / "a.svg", tmp_path / "b.svg"
        for out in (a, b):
            render_complexity_figure(FigureSpec(rmse_path=rmse_path,
                                                slopes_path=slopes_path,
                                                out_path=out))
        assert a.read_bytes() == b.read_bytes()

    def test_valid_svg_document(self, tmp_path):
        rmse_path, slopes_path = write_power_law(tmp_path)
        out = tmp_path / "fig.svg"
        render_complexity_figure(FigureSpec(rmse_path=rmse_path,
                                            slopes_path=slopes_path,
                                            out_path=out))
        root = ET.parse(out).getroot()
        assert root.tag.endswith("svg")


class TestCli:
    def test_main_success(self, tmp_path, capsys):
        rmse_path, slopes_path = write_power_law(tmp_path)
        out = tmp_path / "fig.svg"
        code = main(["--rmse", str(rmse_path), "--slopes", str(slopes_path),
                     "--out", str(out)])
        assert code == 0
        assert out.exists()

    def test_main_missing_column_is_nonzero(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("estimator,rmse\nstandard,0.5\n")
        _, slopes_path = write_power_law(tmp_path)
        code = main(["--rmse", str(bad), "--slopes", str(slopes_path),
                     "--out", str(tmp_path / "f.svg")])
        assert code == 2
        assert "mean_cost" in capsys.readouterr().err

    def test_estimator_subset(self, tmp_path):
        rmse_path, slopes_path = write_power_law(tmp_path,
                                                 estimators=("standard", "cv"))
        out = tmp_path / "fig.svg"
        code = main(["--rmse", str(rmse_path), "--slopes", str(slopes_path),
                     "--out", str(out), "--estimators", "cv"])
        assert code == 0
        text = svg_text(out)
        assert "cv: cost" in text
