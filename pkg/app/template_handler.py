from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from jinja2 import Environment, FileSystemLoader

from app.config import ASSETS_DIR, DEFAULT_WIDTH_MM
from app.data_types import PlotSpec, RunReport

SUMMARY_TEMPLATE = "summary.txt.j2"
PLOT_TEMPLATE = "plot.gp.j2"


def format_metric(value: object) -> str:
    """Human-readable metric value: 6 significant digits, n/a for missing."""
    if value is None:
        return "n/a"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


class TemplateHandler:
    """Renders run summaries and gnuplot scripts using Jinja2."""

    def __init__(self, environment: Environment):
        """Initialize the template handler with a Jinja2 environment.

        Args:
            environment: Environment whose loader provides the summary and
                plot templates
        """
        self.summary_template = environment.get_template(SUMMARY_TEMPLATE)
        self.plot_template = environment.get_template(PLOT_TEMPLATE)

    @classmethod
    def from_assets(cls, assets_dir: Union[str, Path] = ASSETS_DIR) -> "TemplateHandler":
        environment = Environment(
            loader=FileSystemLoader(str(assets_dir)),
            keep_trailing_newline=True,
            trim_blocks=True,
            lstrip_blocks=True,
        )
        return cls(environment)

    def render_summary(
        self,
        report: RunReport,
        units: Optional[Dict[str, str]] = None,
        tables: Sequence[Tuple[str, str]] = (),
        notes: Sequence[str] = (),
        width: float = DEFAULT_WIDTH_MM,
    ) -> str:
        """Render the human-readable summary of one run.

        Args:
            report: Run report; its metrics are listed in insertion order
            units: Unit per metric name, shown next to the value
            tables: (title, preformatted text) blocks appended after the metrics
            notes: Free-form lines such as failed points or assumptions
            width: Device width in mm stated in the header

        Returns:
            The rendered summary as a string.
        """
        units = units or {}
        metrics: List[Tuple[str, str, str]] = [
            (name, format_metric(value), units.get(name, ""))
            for name, value in report.metrics.items()
        ]
        return self.summary_template.render(
            command=report.command,
            version=report.version,
            timestamp=report.timestamp,
            width=width,
            metrics=metrics,
            tables=list(tables),
            notes=list(notes),
            files=report.files,
        )

    def render_plot(self, plot: PlotSpec) -> str:
        """Render a gnuplot script drawing every series of ``plot``.

        Raises:
            ValueError: If the plot has no series
        """
        if not plot.series:
            raise ValueError(f"Plot '{plot.name}' has no series")
        return self.plot_template.render(plot=plot)
