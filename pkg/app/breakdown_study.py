import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from app.data_types import BreakdownResult, ConvergenceError, SimulationError, SolutionState
from app.dd_solver import DriftDiffusionSolver
from app.device_mesh import CHANNEL, Mesh2D, build_mesh
from app.materials_dao import MaterialsDAO
from app.models import BreakdownSweep, DeviceSpec, PhysicsConfig, StudyGrid, _ladder

logger = logging.getLogger(__name__)

# Probe window around the gate's drain-side edge (um)
GATE_EDGE_WINDOW = 0.25
GATE_EDGE_DEPTH_MARGIN = 0.02


def breakdown_voltage(
    solver: DriftDiffusionSolver,
    sweep: Optional[BreakdownSweep] = None,
    equilibrium: Optional[SolutionState] = None,
) -> BreakdownResult:
    """Off-state breakdown voltage by drain ramp and bisection.

    The gate is held at ``v_gs_off`` while the drain climbs in coarse steps.
    The first step whose drain current reaches ``i_crit`` (mA/mm) is refined
    by bisection down to ``fine_step``. Fields are recorded at
    ``probe_bias`` when the ramp passes it.

    Args:
        solver: Drift-diffusion solver with impact ionization enabled
        sweep: Ramp settings
        equilibrium: Optional zero-bias seed

    Returns:
        The breakdown result; ``exceeded`` when the cap is reached and
        ``lower_bound`` when the solver diverged before the criterion was met.
    """
    sweep = sweep or BreakdownSweep()
    mesh = solver.mesh
    dielectric = mesh.dielectric or ""
    fp_length = (
        mesh.field_plate_edge - mesh.gate_edge if mesh.field_plate_edge is not None else 0.0
    )
    criterion = f"I_d >= {sweep.i_crit:g} mA/mm"
    result = BreakdownResult(
        dielectric=dielectric,
        field_plate_length=round(fp_length, 9),
        v_br=None,
        criterion=criterion,
        trace=[],
    )

    if not solver.physics.impact_ionization:
        logger.warning("Impact ionization is disabled; breakdown cannot occur")
        result.exceeded = True
        result.criterion = "exceeded sweep limit (impact ionization disabled)"
        return result

    width = mesh.width
    state = equilibrium or solver.solve_equilibrium()
    state = solver.ramp({"gate": sweep.v_gs_off}, state)

    def solve(v_ds: float, seed: SolutionState) -> Tuple[SolutionState, float]:
        solved = solver.ramp(
            {"gate": sweep.v_gs_off, "drain": v_ds}, seed, max_step=sweep.max_bias_step
        )
        current = abs(solved.drain_current) / width
        result.trace.append((v_ds, current))
        return solved, current

    targets = _ladder(sweep.coarse_step, sweep.v_ds_max, sweep.coarse_step)
    if sweep.probe_bias <= sweep.v_ds_max:
        targets = sorted(set(targets) | {sweep.probe_bias})

    low, low_state = 0.0, state
    for v_ds in targets:
        try:
            state, current = solve(v_ds, low_state)
        except ConvergenceError as e:
            logger.warning("Breakdown ramp diverged above %.1f V: %s", low, e)
            result.v_br = low
            result.lower_bound = True
            result.criterion = f"{criterion} (solver diverged; lower bound)"
            break
        if v_ds == sweep.probe_bias:
            _record_fields(result, mesh, state)
        if current >= sweep.i_crit:
            result.v_br, diverged = _bisect(solve, low, v_ds, low_state, sweep)
            if diverged:
                result.lower_bound = True
                result.criterion = f"{criterion} (solver diverged; lower bound)"
            break
        low, low_state = v_ds, state
    else:
        logger.info("No breakdown below %.0f V", sweep.v_ds_max)
        result.exceeded = True

    result.trace.sort()
    logger.info(
        "Breakdown %s, L_fp = %.2f um: V_BR = %s%s",
        dielectric,
        fp_length,
        result.v_br,
        " (exceeded)" if result.exceeded else "",
    )
    return result


def _bisect(
    solve: Callable[[float, SolutionState], Tuple[SolutionState, float]],
    low: float,
    high: float,
    low_state: SolutionState,
    sweep: BreakdownSweep,
) -> Tuple[float, bool]:
    """Narrow [low, high] to the fine step; (low, True) if a bisection point diverges."""
    while high - low > sweep.fine_step:
        middle = round(0.5 * (low + high), 9)
        try:
            state, current = solve(middle, low_state)
        except ConvergenceError as e:
            logger.warning("Bisection diverged at %.3f V: %s", middle, e)
            return low, True
        if current >= sweep.i_crit:
            high = middle
        else:
            low, low_state = middle, state
    return high, False


def _record_fields(result: BreakdownResult, mesh: Mesh2D, state: SolutionState) -> None:
    xs, ys = mesh.node_coordinates()
    semiconductor = mesh.is_semiconductor_node.ravel()
    depth = mesh.metadata.get("barrier_bottom", 0.0) + GATE_EDGE_DEPTH_MARGIN
    if mesh.gate_edge is not None:
        window = (
            semiconductor
            & (np.abs(xs - mesh.gate_edge) <= GATE_EDGE_WINDOW)
            & (ys >= 0.0)
            & (ys <= depth)
        )
        if np.any(window):
            result.gate_edge_field = float(np.max(state.field[window]))

    channel = mesh.node_region.ravel() == CHANNEL
    if np.any(channel):
        result.peak_channel_field = float(np.max(state.field[channel]))

    if mesh.heterointerface_row is not None and mesh.heterointerface_row + 1 < mesh.ny:
        row = mesh.heterointerface_row + 1
        field = state.field.reshape(mesh.ny, mesh.nx)[row]
        inside = mesh.is_semiconductor_node[row]
        result.channel_profile = [
            (float(x), float(f)) for x, f in zip(mesh.x[inside], field[inside])
        ]


def _run_study_cell(
    job: Tuple[DeviceSpec, PhysicsConfig, BreakdownSweep, MaterialsDAO, str, float, str]
) -> BreakdownResult:
    spec, physics, sweep, materials, dielectric, fp_length, refinement = job
    try:
        cell = spec.model_copy(
            update={"field_plate_length": fp_length, "passivation": dielectric}
        )
        mesh = build_mesh(cell, refinement, materials)
        solver = DriftDiffusionSolver(mesh, physics, materials)
        return breakdown_voltage(solver, sweep)
    except SimulationError as e:
        logger.error("Study cell %s, L_fp = %.2f um failed: %s", dielectric, fp_length, e)
        return BreakdownResult(
            dielectric=dielectric,
            field_plate_length=fp_length,
            v_br=None,
            criterion=f"failed: {e}",
            trace=[],
        )


def fieldplate_study(
    spec: DeviceSpec,
    physics: Optional[PhysicsConfig] = None,
    study: Optional[StudyGrid] = None,
    sweep: Optional[BreakdownSweep] = None,
    materials: Optional[MaterialsDAO] = None,
    refinement: str = "coarse",
    workers: int = 1,
) -> List[BreakdownResult]:
    """Breakdown voltage over field-plate lengths and passivation dielectrics.

    Every (dielectric, L_fp) cell builds its own mesh and ladder; cells run in
    ``workers`` processes and come back ordered by dielectric, then length.
    A failing cell is annotated in its criterion rather than raised.
    """
    physics = physics or PhysicsConfig()
    study = study or StudyGrid()
    sweep = sweep or BreakdownSweep()
    materials = materials or MaterialsDAO.from_file()

    jobs = [
        (spec, physics, sweep, materials, dielectric, fp_length, refinement)
        for dielectric in study.dielectric_names
        for fp_length in study.field_plate_lengths
    ]
    logger.info("Field-plate study: %d cells on %d worker(s)", len(jobs), workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(_run_study_cell, jobs))
    return [_run_study_cell(job) for job in jobs]


def study_table(results: List[BreakdownResult]) -> pd.DataFrame:
    """One row per study cell, ready for the grid summary CSV."""
    rows: List[Dict[str, object]] = []
    for result in results:
        rows.append(
            {
                "dielectric": result.dielectric,
                "l_fp": result.field_plate_length,
                "v_br": np.nan if result.v_br is None else result.v_br,
                "exceeded": int(result.exceeded),
                "lower_bound": int(result.lower_bound),
                "gate_edge_field": np.nan
                if result.gate_edge_field is None
                else result.gate_edge_field,
                "peak_channel_field": np.nan
                if result.peak_channel_field is None
                else result.peak_channel_field,
                "criterion": result.criterion,
            }
        )
    return pd.DataFrame(rows)


def breakdown_trace_table(result: BreakdownResult) -> pd.DataFrame:
    return pd.DataFrame(result.trace, columns=["v_ds", "i_d"])


def channel_profile_table(result: BreakdownResult) -> pd.DataFrame:
    return pd.DataFrame(result.channel_profile, columns=["x", "field"])
