import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional

import numpy as np
import pandas as pd

from app.data_types import ConvergenceError, DCMetrics, IVCurve, SolutionState
from app.dd_solver import DriftDiffusionSolver
from app.models import OutputSweep, TransferSweep, _ladder

logger = logging.getLogger(__name__)

# Subthreshold window relative to the peak current
SS_WINDOW = (1e-6, 1e-2)


def transfer_sweep(
    solver: DriftDiffusionSolver,
    sweep: Optional[TransferSweep] = None,
    equilibrium: Optional[SolutionState] = None,
) -> IVCurve:
    """Drain current versus gate bias at a fixed drain bias.

    The drain is ramped up at the highest gate bias, then the gate steps down
    the ladder so each point seeds the next. Points that fail to converge are
    listed in ``failures`` and left out of the samples.

    Args:
        solver: Drift-diffusion solver for the device
        sweep: Gate ladder and drain bias
        equilibrium: Optional zero-bias seed

    Returns:
        Curve with ascending gate bias.

    Raises:
        ConvergenceError: If the initial drain ramp fails
    """
    sweep = sweep or TransferSweep()
    ladder = _ladder(sweep.v_gs_start, sweep.v_gs_stop, sweep.v_gs_step)[::-1]
    state = equilibrium or solver.solve_equilibrium()
    state = solver.ramp({"gate": ladder[0]}, state)
    state = solver.ramp({"gate": ladder[0], "drain": sweep.v_ds}, state)

    samples, failures = [], []
    for v_gs in ladder:
        try:
            state = solver.ramp({"gate": v_gs, "drain": sweep.v_ds}, state)
        except ConvergenceError as e:
            logger.warning("Transfer point V_gs = %.3f V failed: %s", v_gs, e)
            failures.append((v_gs, str(e)))
            continue
        samples.append((v_gs, state.drain_current, state.kirchhoff_error))

    samples.sort()
    return IVCurve(
        swept="gate",
        values=np.array([s[0] for s in samples]),
        currents=np.array([s[1] for s in samples]),
        fixed_biases={"drain": sweep.v_ds, "source": 0.0},
        converged=np.ones(len(samples), dtype=bool),
        failures=failures,
        kirchhoff=np.array([s[2] for s in samples]),
    )


def output_sweep(
    solver: DriftDiffusionSolver,
    sweep: Optional[OutputSweep] = None,
    workers: int = 1,
    equilibrium: Optional[SolutionState] = None,
) -> List[IVCurve]:
    """Family of drain sweeps, one per gate bias, ordered by gate bias.

    Ladders are independent and run on ``workers`` threads.
    """
    sweep = sweep or OutputSweep()
    seed = equilibrium or solver.solve_equilibrium()

    def ladder_for(v_gs: float) -> IVCurve:
        return _drain_ladder(solver, seed, v_gs, sweep)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(ladder_for, sweep.gate_biases))
    return [ladder_for(v_gs) for v_gs in sweep.gate_biases]


def _drain_ladder(
    solver: DriftDiffusionSolver, seed: SolutionState, v_gs: float, sweep: OutputSweep
) -> IVCurve:
    samples, failures = [], []
    try:
        state = solver.ramp({"gate": v_gs}, seed)
    except ConvergenceError as e:
        logger.warning("Gate ramp to %.3f V failed: %s", v_gs, e)
        return IVCurve(
            swept="drain",
            values=np.array([]),
            currents=np.array([]),
            fixed_biases={"gate": v_gs, "source": 0.0},
            converged=np.array([], dtype=bool),
            failures=[(v_gs, str(e))],
            kirchhoff=np.array([]),
        )

    for v_ds in _ladder(0.0, sweep.v_ds_stop, sweep.v_ds_step):
        try:
            state = solver.ramp({"gate": v_gs, "drain": v_ds}, state)
        except ConvergenceError as e:
            logger.warning("Output point V_gs = %.3f V, V_ds = %.3f V failed: %s", v_gs, v_ds, e)
            failures.append((v_ds, str(e)))
            continue
        samples.append((v_ds, state.drain_current, state.kirchhoff_error))

    return IVCurve(
        swept="drain",
        values=np.array([s[0] for s in samples]),
        currents=np.array([s[1] for s in samples]),
        fixed_biases={"gate": v_gs, "source": 0.0},
        converged=np.ones(len(samples), dtype=bool),
        failures=failures,
        kirchhoff=np.array([s[2] for s in samples]),
    )


def transconductance(curve: IVCurve) -> np.ndarray:
    """dI_d/dV_gs by central differences, in mS."""
    if len(curve.values) < 2:
        return np.zeros(len(curve.values))
    return np.gradient(curve.currents, curve.values)


def subthreshold_slope_curve(curve: IVCurve) -> pd.DataFrame:
    """Point-wise subthreshold swing between neighbouring samples.

    Returns:
        Columns v_gs (midpoint, V) and ss (mV/dec); pairs with a non-positive
        current or no current change are dropped.
    """
    v, i = curve.values, curve.currents
    rows = []
    for k in range(len(v) - 1):
        if i[k] <= 0 or i[k + 1] <= 0 or i[k + 1] == i[k]:
            continue
        decades = np.log10(i[k + 1]) - np.log10(i[k])
        rows.append((0.5 * (v[k] + v[k + 1]), 1e3 * (v[k + 1] - v[k]) / decades))
    return pd.DataFrame(rows, columns=["v_gs", "ss"])


def extract_dc_metrics(curve: IVCurve) -> DCMetrics:
    """Threshold voltage, subthreshold swing, peak g_m and peak current.

    V_th extrapolates the tangent at the peak-g_m point to zero current. SS
    is the steepest swing over neighbouring samples inside the window
    [1e-6, 1e-2] x I_peak. Metrics that the curve cannot support are left
    as None with the reason in ``unavailable``.
    """
    unavailable = {}
    if len(curve.values) < 3:
        reason = f"curve has {len(curve.values)} samples; at least 3 are needed"
        return DCMetrics(
            None, None, None, None, {"v_th": reason, "ss": reason, "gm_peak": reason}
        )

    v, i = curve.values, curve.currents
    i_peak = float(np.max(i))
    gm = transconductance(curve)
    peak = int(np.argmax(gm))
    gm_peak: Optional[float] = float(gm[peak])
    v_th: Optional[float] = None
    if gm_peak > 0:
        v_th = float(v[peak] - i[peak] / gm_peak)
    else:
        unavailable["v_th"] = "transconductance never positive"
        unavailable["gm_peak"] = "transconductance never positive"
        gm_peak = None

    ss: Optional[float] = None
    low, high = SS_WINDOW[0] * i_peak, SS_WINDOW[1] * i_peak
    swings = []
    for k in range(len(v) - 1):
        pair = i[k : k + 2]
        if i_peak > 0 and np.all((pair >= low) & (pair <= high)) and pair[1] > pair[0]:
            swings.append(1e3 * (v[k + 1] - v[k]) / (np.log10(pair[1]) - np.log10(pair[0])))
    if swings:
        ss = float(min(swings))
    else:
        unavailable["ss"] = "no rising sample pair inside the subthreshold window"

    return DCMetrics(v_th=v_th, ss=ss, gm_peak=gm_peak, i_peak=i_peak, unavailable=unavailable)


def curve_table(curve: IVCurve) -> pd.DataFrame:
    """CSV-ready table of a curve: swept voltage, drain current, Kirchhoff error."""
    column = "v_gs" if curve.swept == "gate" else "v_ds"
    return pd.DataFrame(
        {
            column: curve.values,
            "i_d": curve.currents,
            "kirchhoff": curve.kirchhoff
            if curve.kirchhoff is not None
            else np.zeros(len(curve.values)),
        }
    )
