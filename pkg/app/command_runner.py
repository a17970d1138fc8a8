import json
import logging
import math
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from app import breakdown_study, dc_analysis
from app.ac_analysis import (
    ac_spectrum,
    lumped_elements,
    quasi_static_foms,
    spectrum_table,
    write_touchstone,
)
from app.config import MATERIALS_FILE, OUTPUT_DIR, VERSION, WORKERS
from app.config_parser import dump_config
from app.data_types import PlotSeries, PlotSpec, RunReport
from app.dd_solver import DriftDiffusionSolver
from app.device_mesh import build_mesh, validate_spec
from app.materials_dao import MaterialsDAO
from app.models import RunConfig, _ladder
from app.result_writer import ResultWriter
from app.sp_solver import SchrodingerPoissonSolver, band_summary, gate_stack
from app.template_handler import TemplateHandler

logger = logging.getLogger(__name__)

COMMANDS = ("band", "dc", "output", "breakdown", "fp-study", "ac")

FIELD_UNITS = {
    "x": "um",
    "y": "um",
    "psi": "V",
    "n": "cm-3",
    "p": "cm-3",
    "field": "MV/cm",
    "T_n": "K",
}


@dataclass
class CommandOutcome:
    """What a command hands back for the report."""

    metrics: Dict[str, object]
    units: Dict[str, str] = field(default_factory=dict)
    tables: List[Tuple[str, str]] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)
    iterations: Dict[str, int] = field(default_factory=dict)


def _column(table: pd.DataFrame, name: str) -> int:
    return table.columns.get_loc(name) + 1


def _json_ready(value: object) -> object:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, np.generic):
        return _json_ready(value.item())
    return value


class CommandRunner:
    """Runs one analysis command and writes its CSVs, plot scripts and summary."""

    def __init__(
        self,
        config: RunConfig,
        writer: ResultWriter,
        template_handler: TemplateHandler,
        materials: MaterialsDAO,
        workers: int = 1,
        refinement: str = "normal",
    ):
        """Initialize the runner.

        Args:
            config: Resolved run configuration
            writer: Writer owning the output directory
            template_handler: Renders summaries and plot scripts
            materials: Parameter database
            workers: Parallel workers for sweeps and studies
            refinement: Mesh refinement level
        """
        self.config = config
        self.writer = writer
        self.template_handler = template_handler
        self.materials = materials
        self.workers = workers
        self.refinement = refinement
        self._handlers = {
            "band": self._band,
            "dc": self._dc,
            "output": self._output,
            "breakdown": self._breakdown,
            "fp-study": self._fp_study,
            "ac": self._ac,
        }

    def run(self, command: str) -> RunReport:
        """Run ``command`` and write every output file.

        Raises:
            ValueError: For an unknown command
            SimulationError: Subclasses propagate from validation and solvers
        """
        if command not in self._handlers:
            raise ValueError(f"Unknown command '{command}'; choose from {', '.join(COMMANDS)}")

        validate_spec(self.config.device, self.materials)
        started = time.perf_counter()
        logger.info(
            "Running %s (refinement %s, %d worker(s))", command, self.refinement, self.workers
        )
        outcome = self._handlers[command]()

        config_echo = dump_config(self.config)
        self.writer.write_text("resolved.cfg", config_echo)
        metrics = {name: _json_ready(value) for name, value in outcome.metrics.items()}
        self.writer.write_text(
            f"{self._stem(command)}_metrics.json",
            json.dumps({"metrics": metrics, "iterations": outcome.iterations}, indent=2) + "\n",
        )

        report = RunReport(
            command=command,
            version=VERSION,
            config_echo=config_echo,
            metrics=metrics,
            files=list(self.writer.files),
            timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
            wall_clock=time.perf_counter() - started,
            iterations=outcome.iterations,
        )
        summary_name = f"{self._stem(command)}_summary.txt"
        report.files.append(summary_name)
        summary = self.template_handler.render_summary(
            report,
            units=outcome.units,
            tables=outcome.tables,
            notes=outcome.notes,
            width=self.config.device.width,
        )
        self.writer.write_text(summary_name, summary)
        logger.info("%s finished in %.1f s", command, report.wall_clock)
        return report

    @staticmethod
    def _stem(command: str) -> str:
        return command.replace("-", "_")

    def _plot(self, plot: PlotSpec) -> None:
        self.writer.write_text(f"{plot.name}.gp", self.template_handler.render_plot(plot))

    def _solver(self) -> DriftDiffusionSolver:
        mesh = build_mesh(self.config.device, self.refinement, self.materials)
        return DriftDiffusionSolver(mesh, self.config.physics, self.materials)

    def _band(self) -> CommandOutcome:
        band = self.config.band
        stack = gate_stack(
            self.config.device, self.materials, self.config.physics.lattice_temperature
        )
        solver = SchrodingerPoissonSolver(band)
        diagram = solver.solve_sp(stack, band.gate_bias)

        table = pd.DataFrame(
            {
                "z": diagram.z,
                "ec": diagram.ec,
                "ev": diagram.ev,
                "n": diagram.n,
                "p": diagram.p,
                "field": diagram.field,
            }
        )
        units = {"z": "nm", "ec": "eV", "ev": "eV", "n": "cm-3", "p": "cm-3", "field": "MV/cm"}
        self.writer.write_csv("band.csv", table, units)

        states = pd.DataFrame({"z": diagram.z})
        for index, (energy, wavefunction) in enumerate(
            zip(diagram.energies, diagram.wavefunctions), start=1
        ):
            states[f"E{index}"] = energy + wavefunction**2
        self.writer.write_csv(
            "band_states.csv", states, {"z": "nm", **{c: "eV" for c in states.columns[1:]}}
        )

        biases = _ladder(band.sweep_start, band.sweep_stop, band.sweep_step)
        ns_table, pinch_off = solver.ns_sweep(stack, biases, self.workers)
        ns_table["converged"] = ns_table["converged"].astype(int)
        self.writer.write_csv("ns.csv", ns_table, {"gate_bias": "V", "n_s": "cm-2"})

        self._plot(
            PlotSpec(
                name="band",
                title=f"Conduction band and electron density at V_g = {band.gate_bias:g} V",
                x_label="depth (nm)",
                y_label="energy (eV)",
                series=[
                    PlotSeries("band.csv", 1, _column(table, "ec"), "E_c"),
                    PlotSeries("band.csv", 1, _column(table, "ev"), "E_v"),
                ]
                + [
                    PlotSeries("band_states.csv", 1, i + 2, f"E_{i + 1}")
                    for i in range(len(diagram.energies))
                ],
            )
        )
        self._plot(
            PlotSpec(
                name="ns",
                title="Sheet density versus gate bias",
                x_label="V_g (V)",
                y_label="n_s (cm^-2)",
                series=[PlotSeries("ns.csv", 1, 2, "n_s")],
            )
        )

        metrics: Dict[str, object] = dict(band_summary(diagram))
        metrics["pinch_off"] = pinch_off
        units = {
            "gate_bias": "V",
            "n_s": "cm-2",
            "peak_field": "MV/cm",
            "peak_n": "cm-3",
            "peak_depth": "nm",
            "gate_charge": "cm-2",
            "pinch_off": "V",
            **{f"E{i}": "eV" for i in range(1, 4)},
        }
        notes = [] if pinch_off is not None else ["no pinch-off inside the gate sweep"]
        return CommandOutcome(
            metrics=metrics,
            units=units,
            tables=[("Sheet density sweep", ns_table.to_string(index=False))],
            notes=notes,
            iterations={"sp": diagram.iterations},
        )

    def _dc(self) -> CommandOutcome:
        sweep = self.config.transfer
        solver = self._solver()
        equilibrium = solver.solve_equilibrium()
        curve = dc_analysis.transfer_sweep(solver, sweep, equilibrium)
        metrics_record = dc_analysis.extract_dc_metrics(curve)

        table = dc_analysis.curve_table(curve)
        table["g_m"] = dc_analysis.transconductance(curve)
        self.writer.write_csv(
            "transfer.csv", table, {"v_gs": "V", "i_d": "mA", "g_m": "mS"}
        )
        ss_table = dc_analysis.subthreshold_slope_curve(curve)
        self.writer.write_csv("ss.csv", ss_table, {"v_gs": "V", "ss": "mV/dec"})

        state = solver.ramp({"gate": sweep.v_gs_stop}, equilibrium)
        state = solver.ramp({"gate": sweep.v_gs_stop, "drain": sweep.v_ds}, state)
        state.electron_temperature = solver.electron_temperature_post(state)
        self.writer.write_csv("field_dc.csv", solver.field_dump(state), FIELD_UNITS)

        self._plot(
            PlotSpec(
                name="transfer",
                title=f"Transfer characteristic at V_ds = {sweep.v_ds:g} V",
                x_label="V_gs (V)",
                y_label="I_d (mA)",
                series=[PlotSeries("transfer.csv", 1, 2, "I_d")],
                log_y=True,
            )
        )
        self._plot(
            PlotSpec(
                name="gm",
                title="Transconductance",
                x_label="V_gs (V)",
                y_label="g_m (mS)",
                series=[PlotSeries("transfer.csv", 1, _column(table, "g_m"), "g_m")],
            )
        )
        self._plot(
            PlotSpec(
                name="ss",
                title="Subthreshold swing",
                x_label="V_gs (V)",
                y_label="SS (mV/dec)",
                series=[PlotSeries("ss.csv", 1, 2, "SS")],
            )
        )

        metrics = {
            "v_th": metrics_record.v_th,
            "ss": metrics_record.ss,
            "gm_peak": metrics_record.gm_peak,
            "i_peak": metrics_record.i_peak,
            "max_kirchhoff": float(np.max(curve.kirchhoff)) if len(curve.values) else None,
            "peak_electron_temperature": float(np.nanmax(state.electron_temperature)),
        }
        notes = [
            f"{name} unavailable: {reason}"
            for name, reason in metrics_record.unavailable.items()
        ]
        notes += [f"V_gs = {v:g} V failed: {reason}" for v, reason in curve.failures]
        return CommandOutcome(
            metrics=metrics,
            units={
                "v_th": "V",
                "ss": "mV/dec",
                "gm_peak": "mS",
                "i_peak": "mA",
                "peak_electron_temperature": "K",
            },
            notes=notes,
            iterations={"points": len(curve.values), "failures": len(curve.failures)},
        )

    def _output(self) -> CommandOutcome:
        sweep = self.config.output
        solver = self._solver()
        curves = dc_analysis.output_sweep(solver, sweep, self.workers)

        series, metrics, notes = [], {}, []
        for curve in curves:
            v_gs = curve.fixed_biases["gate"]
            name = f"output_vgs_{v_gs:+.2f}.csv"
            self.writer.write_csv(name, dc_analysis.curve_table(curve), {"v_ds": "V", "i_d": "mA"})
            series.append(PlotSeries(name, 1, 2, f"V_gs = {v_gs:g} V"))
            metrics[f"i_d_max(V_gs={v_gs:g})"] = (
                float(curve.currents[-1]) if len(curve.currents) else None
            )
            notes += [
                f"V_gs = {v_gs:g} V, V_ds = {v:g} V failed: {reason}"
                for v, reason in curve.failures
            ]

        self._plot(
            PlotSpec(
                name="output",
                title="Output characteristics",
                x_label="V_ds (V)",
                y_label="I_d (mA)",
                series=series,
            )
        )
        return CommandOutcome(
            metrics=metrics,
            units={name: "mA" for name in metrics},
            notes=notes,
            iterations={
                "points": sum(len(c.values) for c in curves),
                "failures": sum(len(c.failures) for c in curves),
            },
        )

    def _breakdown(self) -> CommandOutcome:
        result = breakdown_study.breakdown_voltage(self._solver(), self.config.breakdown)
        self.writer.write_csv(
            "breakdown.csv",
            breakdown_study.breakdown_trace_table(result),
            {"v_ds": "V", "i_d": "mA/mm"},
        )
        self._plot(
            PlotSpec(
                name="breakdown",
                title=(
                    f"Off-state drain current, {result.dielectric}, "
                    f"L_fp = {result.field_plate_length:g} um"
                ),
                x_label="V_ds (V)",
                y_label="I_d (mA/mm)",
                series=[PlotSeries("breakdown.csv", 1, 2, "I_d")],
                log_y=True,
            )
        )
        if result.channel_profile:
            self.writer.write_csv(
                "channel_field.csv",
                breakdown_study.channel_profile_table(result),
                {"x": "um", "field": "MV/cm"},
            )
            self._plot(
                PlotSpec(
                    name="channel_field",
                    title=f"Channel field at V_ds = {self.config.breakdown.probe_bias:g} V",
                    x_label="x (um)",
                    y_label="|E| (MV/cm)",
                    series=[PlotSeries("channel_field.csv", 1, 2, "|E|")],
                )
            )
        metrics = {
            "dielectric": result.dielectric,
            "l_fp": result.field_plate_length,
            "v_br": result.v_br,
            "criterion": result.criterion,
            "exceeded": result.exceeded,
            "lower_bound": result.lower_bound,
            "gate_edge_field": result.gate_edge_field,
            "peak_channel_field": result.peak_channel_field,
        }
        return CommandOutcome(
            metrics=metrics,
            units={
                "l_fp": "um",
                "v_br": "V",
                "gate_edge_field": "MV/cm",
                "peak_channel_field": "MV/cm",
            },
            iterations={"points": len(result.trace)},
        )

    def _fp_study(self) -> CommandOutcome:
        results = breakdown_study.fieldplate_study(
            self.config.device,
            self.config.physics,
            self.config.study,
            self.config.breakdown,
            self.materials,
            self.refinement,
            self.workers,
        )
        for result in results:
            self.writer.write_csv(
                f"breakdown_{result.dielectric}_{result.field_plate_length:.2f}um.csv",
                breakdown_study.breakdown_trace_table(result),
                {"v_ds": "V", "i_d": "mA/mm"},
            )

        grid = breakdown_study.study_table(results)
        self.writer.write_csv(
            "fp_study.csv",
            grid,
            {
                "l_fp": "um",
                "v_br": "V",
                "gate_edge_field": "MV/cm",
                "peak_channel_field": "MV/cm",
            },
        )
        pivot = grid.pivot(index="l_fp", columns="dielectric", values="v_br")
        pivot = pivot[[name for name in self.config.study.dielectric_names if name in pivot]]
        pivot = pivot.reset_index()
        pivot.columns.name = None
        vbr_units = {column: "V" for column in pivot.columns[1:]}
        vbr_units["l_fp"] = "um"
        self.writer.write_csv("fp_study_vbr.csv", pivot, vbr_units)
        self._plot(
            PlotSpec(
                name="fp_study",
                title="Breakdown voltage versus field-plate length",
                x_label="L_fp (um)",
                y_label="V_BR (V)",
                series=[
                    PlotSeries("fp_study_vbr.csv", 1, i + 2, name)
                    for i, name in enumerate(pivot.columns[1:])
                ],
            )
        )

        metrics: Dict[str, object] = {}
        for result in results:
            metrics[f"v_br({result.dielectric}, {result.field_plate_length:g} um)"] = result.v_br
        notes = [
            f"{r.dielectric}, L_fp = {r.field_plate_length:g} um: {r.criterion}"
            for r in results
            if r.exceeded or r.lower_bound or r.criterion.startswith("failed")
        ]
        return CommandOutcome(
            metrics=metrics,
            units={name: "V" for name in metrics},
            tables=[("Breakdown grid", grid.to_string(index=False))],
            notes=notes,
            iterations={"cells": len(results)},
        )

    def _ac(self) -> CommandOutcome:
        sweep = self.config.ac
        spectrum = ac_spectrum(self._solver(), sweep, workers=self.workers)
        table = spectrum_table(spectrum)
        units = {"f": "Hz", "h21_db": "dB", "u_db": "dB", "gma_db": "dB", "gms_db": "dB"}
        units.update({c: "S" for c in table.columns if c[3:4] == "y"})
        self.writer.write_csv("ac.csv", table, units)
        if sweep.touchstone:
            written = write_touchstone(spectrum, self.writer.output_dir / "ac.s2p")
            self.writer.register(written.name)

        self._plot(
            PlotSpec(
                name="ac_gain",
                title="Current gain and unilateral power gain",
                x_label="f (Hz)",
                y_label="gain (dB)",
                series=[
                    PlotSeries("ac.csv", 1, _column(table, "h21_db"), "|h21|"),
                    PlotSeries("ac.csv", 1, _column(table, "u_db"), "U"),
                ],
                log_x=True,
            )
        )
        self._plot(
            PlotSpec(
                name="ac_stability",
                title="Maximum available and maximum stable gain",
                x_label="f (Hz)",
                y_label="gain (dB)",
                series=[
                    PlotSeries("ac.csv", 1, _column(table, "gma_db"), "G_ma"),
                    PlotSeries("ac.csv", 1, _column(table, "gms_db"), "G_ms"),
                ],
                log_x=True,
            )
        )

        lumped = lumped_elements(
            spectrum.frequencies, spectrum.y, sweep.gate_resistance, self.config.device.width
        )
        f_t_est, f_max_est = quasi_static_foms(
            lumped["g_m"], lumped["c_gs"], lumped["c_gd"], lumped["r_g"], lumped["r_out"]
        )
        metrics: Dict[str, object] = {
            "v_gs": sweep.v_gs,
            "v_ds": sweep.v_ds,
            "i_d": spectrum.operating_point["i_d"],
            "f_t": spectrum.f_t.value,
            "f_t_extrapolated": spectrum.f_t.extrapolated,
            "f_t_on_grid": spectrum.f_t.on_grid,
            "f_t_rolloff": spectrum.f_t.extrapolated_value,
            "f_max": spectrum.f_max.value,
            "f_max_extrapolated": spectrum.f_max.extrapolated,
            "f_max_on_grid": spectrum.f_max.on_grid,
            "f_max_rolloff": spectrum.f_max.extrapolated_value,
            "f_t_quasi_static": f_t_est,
            "f_max_quasi_static": f_max_est,
            "stability_frequency": spectrum.stability_frequency,
            **lumped,
        }
        notes = [
            f"{name}: {fom.reason}"
            for name, fom in (("f_t", spectrum.f_t), ("f_max", spectrum.f_max))
            if fom.reason
        ]
        hz = ("f_t", "f_t_on_grid", "f_t_rolloff", "f_max", "f_max_on_grid", "f_max_rolloff")
        hz += ("f_t_quasi_static", "f_max_quasi_static", "stability_frequency")
        units = {name: "Hz" for name in hz}
        units.update(
            v_gs="V", v_ds="V", i_d="mA", g_m="S", c_gs="F", c_gd="F", r_out="ohm", r_g="ohm"
        )
        return CommandOutcome(
            metrics=metrics,
            units=units,
            notes=notes,
            iterations={"frequencies": len(spectrum.frequencies)},
        )


def run_command(
    config: RunConfig,
    command: str,
    output_dir: Optional[Union[str, Path]] = None,
    workers: Optional[int] = None,
    refinement: Optional[str] = None,
    materials: Optional[MaterialsDAO] = None,
) -> RunReport:
    """Run one command with arguments taking precedence over the config file.

    Args:
        config: Resolved configuration
        command: One of ``COMMANDS``
        output_dir: Overrides ``[run] output_dir``
        workers: Overrides ``[run] workers``
        refinement: Overrides ``[run] refinement``
        materials: Preloaded database; read from ``[run] materials_file`` otherwise

    Returns:
        The run report.
    """
    run = config.run
    if materials is None:
        materials = MaterialsDAO.from_file(run.materials_file or MATERIALS_FILE)
    runner = CommandRunner(
        config=config,
        writer=ResultWriter(output_dir or run.output_dir or OUTPUT_DIR),
        template_handler=TemplateHandler.from_assets(),
        materials=materials,
        workers=workers or run.workers or WORKERS,
        refinement=refinement or run.refinement,
    )
    return runner.run(command)
