from pathlib import Path

import pytest
from jinja2 import Environment, FileSystemLoader

from app.data_types import PlotSeries, PlotSpec, RunReport
from app.template_handler import TemplateHandler, format_metric


@pytest.fixture
def template_handler():
    """Create a TemplateHandler instance for testing."""
    template_path = Path(__file__).parent.parent / "assets"
    env = Environment(
        loader=FileSystemLoader(str(template_path)),
        keep_trailing_newline=True,
        trim_blocks=True,
        lstrip_blocks=True,
    )
    return TemplateHandler(env)


@pytest.fixture
def report():
    return RunReport(
        command="breakdown",
        version="0.3.0",
        config_echo="",
        metrics={"v_br": 437.5, "exceeded": False, "gate_edge_field": None},
        files=["breakdown.csv", "breakdown.gp"],
        timestamp="2026-01-01T00:00:00+00:00",
    )


TEST_CASES = [
    (None, "n/a", "Missing value"),
    (True, "yes", "True flag"),
    (False, "no", "False flag"),
    (1.0 / 3.0, "0.333333", "Float rounded to 6 digits"),
    (1.5e10, "1.5e+10", "Large float"),
    (12, "12", "Integer"),
    ("HfO2", "HfO2", "String"),
]


@pytest.mark.parametrize(
    "value,expected,description",
    TEST_CASES,
    ids=[case[2] for case in TEST_CASES],
)
def test_format_metric(value, expected, description):
    assert format_metric(value) == expected, f"Failed for case: {description}"


def test_render_summary(template_handler, report):
    """Test that every section of the summary is rendered."""
    summary = template_handler.render_summary(
        report,
        units={"v_br": "V", "gate_edge_field": "MV/cm"},
        tables=[("Breakdown grid", "l_fp v_br\n1.0  420")],
        notes=["HfO2, L_fp = 2 um: exceeded"],
        width=0.5,
    )

    lines = summary.splitlines()
    assert lines[0] == "heterosim 0.3.0 -- breakdown"
    assert lines[1] == "generated: 2026-01-01T00:00:00+00:00"
    assert lines[2] == "device width 0.5 mm (absolute currents scale with it)"
    assert "  v_br                     437.5 V" in lines
    assert "  exceeded                 no" in lines
    assert "  gate_edge_field          n/a MV/cm" in lines
    assert "Breakdown grid" in lines
    assert "  - HfO2, L_fp = 2 um: exceeded" in lines
    assert lines[-2:] == ["  breakdown.csv", "  breakdown.gp"]
    assert summary.endswith("\n")


def test_render_summary_without_optional_sections(template_handler, report):
    report.metrics = {}
    summary = template_handler.render_summary(report)
    assert "Metrics" not in summary
    assert "Notes" not in summary
    assert "Files" in summary


def test_render_plot(template_handler):
    """Test the gnuplot script for a two-series log plot."""
    plot = PlotSpec(
        name="ac_gain",
        title="Gains",
        x_label="f (Hz)",
        y_label="gain (dB)",
        series=[PlotSeries("ac.csv", 1, 18, "|h21|"), PlotSeries("ac.csv", 1, 19, "U")],
        log_x=True,
    )
    script = template_handler.render_plot(plot)

    assert script.startswith("# heterosim plot: ac_gain\n")
    assert 'set datafile separator ","' in script
    assert "set logscale x" in script
    assert "set logscale y" not in script
    assert '"ac.csv" using 1:18 with linespoints title "|h21|", \\' in script
    assert script.rstrip().endswith('"ac.csv" using 1:19 with linespoints title "U"')


def test_render_plot_without_series(template_handler):
    plot = PlotSpec(name="empty", title="", x_label="", y_label="", series=[])
    with pytest.raises(ValueError, match="Plot 'empty' has no series"):
        template_handler.render_plot(plot)


def test_from_assets():
    handler = TemplateHandler.from_assets()
    assert handler.summary_template.name == "summary.txt.j2"
    assert handler.plot_template.name == "plot.gp.j2"
