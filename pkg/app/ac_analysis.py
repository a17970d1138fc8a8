"""Small-signal AC analysis about a converged DC operating point.

The drift-diffusion residual F(x) balances the stored carrier charge, so a
sinusoidal perturbation obeys (J - jw C) dx = b with J the DC Jacobian and C
the node charge derivatives. Gate and drain are ports 1 and 2; the source is
grounded.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp
import skrf as rf
from scipy import constants
from scipy.sparse.linalg import splu

from app.data_types import FigureOfMerit, SingularNetworkError, SolutionState, TwoPortSpectrum
from app.dd_discretization import TERMINAL_CODES
from app.dd_solver import DriftDiffusionSolver
from app.models import AcSweep

logger = logging.getLogger(__name__)

PORTS = ("gate", "drain")
TEST_AMPLITUDE = 1e-3  # V
EPS0_F_PER_CM = constants.epsilon_0 * 1e-2
# Gain roll-off assumed beyond the solved grid (dB per decade)
ROLL_OFF = -20.0


class SmallSignalModel:
    """Linearization of one DC state: Jacobian, charge matrix and port currents."""

    def __init__(self, solver: DriftDiffusionSolver, state: SolutionState):
        grid = solver.grid
        self.grid = grid
        size, vt = grid.size, grid.vt
        psi_fixed, phi_fixed = grid.boundary_values(state.biases)
        _, self.jacobian = grid.system(state.psi, state.phi_n, state.phi_p, psi_fixed, phi_fixed)

        n, p = grid.densities(state.psi, state.phi_n, state.phi_p)
        free = grid.free_sc
        index = np.flatnonzero(free)
        stored_n = grid.area[index] * n[index] / vt
        stored_p = grid.area[index] * p[index] / vt
        rows = np.concatenate([size + index, size + index, 2 * size + index, 2 * size + index])
        cols = np.concatenate([index, size + index, index, 2 * size + index])
        vals = np.concatenate([stored_n, -stored_n, -stored_p, stored_p])
        self.charge = sp.csc_matrix((vals, (rows, cols)), shape=(3 * size, 3 * size))

        self.excitation = np.zeros((3 * size, len(PORTS)))
        for column, name in enumerate(PORTS):
            nodes = np.flatnonzero(grid.terminal == TERMINAL_CODES[name])
            for offset in (0, size, 2 * size):
                self.excitation[offset + nodes, column] = TEST_AMPLITUDE

        fluxes = grid.fluxes(state.psi, state.phi_n, state.phi_p, n, p, derivatives=True)
        self.conduction, self.displacement = self._port_currents(fluxes)

    def _port_currents(self, fluxes) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
        """Maps from dx to the current entering each port (A), split into the
        conduction part and the displacement part per unit jw."""
        grid = self.grid
        size = grid.size
        k, l = grid.t_tail, grid.t_head
        offsets = {"psi": 0, "phin": size, "phip": 2 * size}
        djn, djp = fluxes.derivatives["jn"], fluxes.derivatives["jp"]

        c_rows, c_cols, c_vals = [], [], []
        d_rows, d_cols, d_vals = [], [], []
        for port, name in enumerate(PORTS):
            contact = np.zeros(size, dtype=bool)
            contact[grid.contacts[name]] = True
            outward = contact[k] & grid.free_sc[l]
            inward = contact[l] & grid.free_sc[k]
            sign = np.where(outward, 1.0, np.where(inward, -1.0, 0.0))
            edges = np.flatnonzero(sign)
            for var in djn:
                unknown, end = var.split("_")
                nodes = k if end == "k" else l
                c_rows.append(np.full(len(edges), port))
                c_cols.append(offsets[unknown] + nodes[edges])
                c_vals.append(
                    sign[edges] * grid.t_w[edges] * (djn[var][edges] + djp[var][edges])
                )

            terminal = grid.terminal == TERMINAL_CODES[name]
            pk, pl, coupling = grid.p_tail, grid.p_head, grid.p_coupling
            for inner, outer in ((pk, pl), (pl, pk)):
                edges = np.flatnonzero(terminal[inner] & ~terminal[outer])
                c = EPS0_F_PER_CM * coupling[edges]
                d_rows += [np.full(len(edges), port), np.full(len(edges), port)]
                d_cols += [inner[edges], outer[edges]]
                d_vals += [c, -c]

        shape = (len(PORTS), 3 * size)
        scale = grid.width_cm
        conduction = sp.csr_matrix(
            (scale * np.concatenate(c_vals), (np.concatenate(c_rows), np.concatenate(c_cols))),
            shape=shape,
        )
        displacement = sp.csr_matrix(
            (scale * np.concatenate(d_vals), (np.concatenate(d_rows), np.concatenate(d_cols))),
            shape=shape,
        )
        return conduction, displacement

    def admittance(self, frequency: float) -> np.ndarray:
        """2x2 complex Y (S) at one frequency.

        Raises:
            SingularNetworkError: If the linearized system is singular
        """
        omega = 2.0 * np.pi * frequency
        system = sp.csc_matrix(self.jacobian - 1j * omega * self.charge)
        try:
            response = splu(system).solve(self.excitation.astype(complex))
        except RuntimeError as e:
            raise SingularNetworkError(
                f"Linearized system is singular at {frequency:.6g} Hz: {e}", frequency
            ) from e
        if not np.all(np.isfinite(response)):
            raise SingularNetworkError(
                f"Non-finite small-signal response at {frequency:.6g} Hz", frequency
            )
        currents = self.conduction @ response + 1j * omega * (self.displacement @ response)
        return currents / TEST_AMPLITUDE


def ac_solve(
    solver: DriftDiffusionSolver,
    state: SolutionState,
    frequencies: np.ndarray,
    workers: int = 1,
) -> np.ndarray:
    """Y-parameters of the device at a DC operating point.

    Args:
        solver: Solver that produced ``state``
        state: Converged DC state
        frequencies: Strictly increasing frequencies in Hz
        workers: Threads used across frequencies

    Returns:
        Array (nf, 2, 2) of complex admittances in S, gate = port 1, drain = port 2.

    Raises:
        SingularNetworkError: Naming the first frequency whose system is singular
    """
    frequencies = np.asarray(frequencies, dtype=float)
    if np.any(np.diff(frequencies) <= 0):
        raise ValueError("Frequencies must be strictly increasing")
    model = SmallSignalModel(solver, state)
    logger.info("AC solve over %d frequencies on %d worker(s)", len(frequencies), workers)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            blocks = list(executor.map(model.admittance, frequencies))
    else:
        blocks = [model.admittance(f) for f in frequencies]
    return np.stack(blocks)


def _bilinear(matrix: np.ndarray, scale: float) -> np.ndarray:
    """(I - scale M)(I + scale M)^-1 over a stack of 2x2 matrices."""
    identity = np.eye(matrix.shape[-1])
    numerator = identity - scale * matrix
    denominator = identity + scale * matrix
    try:
        transposed = np.linalg.solve(
            np.swapaxes(denominator, -1, -2), np.swapaxes(numerator, -1, -2)
        )
    except np.linalg.LinAlgError as e:
        raise SingularNetworkError(f"Singular two-port conversion: {e}") from e
    result = np.swapaxes(transposed, -1, -2)
    if not np.all(np.isfinite(result)):
        raise SingularNetworkError("Two-port conversion produced non-finite values")
    return result


def y_to_s(y: np.ndarray, z0: float = 50.0) -> np.ndarray:
    """S = (I - z0 Y)(I + z0 Y)^-1 for one 2x2 matrix or a stack of them.

    Raises:
        SingularNetworkError: If I + z0 Y is singular
    """
    return _bilinear(np.asarray(y, dtype=complex), z0)


def s_to_y(s: np.ndarray, z0: float = 50.0) -> np.ndarray:
    """Y = (I - S)(I + S)^-1 / z0.

    Raises:
        SingularNetworkError: If I + S is singular
    """
    return _bilinear(np.asarray(s, dtype=complex), 1.0) / z0


def current_gain(y: np.ndarray) -> np.ndarray:
    """|h21| = |Y21 / Y11| (linear)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.abs(y[..., 1, 0] / y[..., 0, 0])


def mason_gain(y: np.ndarray) -> np.ndarray:
    """Unilateral power gain U (linear); NaN where it is not positive."""
    numerator = np.abs(y[..., 1, 0] - y[..., 0, 1]) ** 2
    denominator = 4.0 * (
        y[..., 0, 0].real * y[..., 1, 1].real - y[..., 0, 1].real * y[..., 1, 0].real
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = numerator / denominator
    return np.where(denominator > 0, gain, np.nan)


def stability_gains(s: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rollett factor K, maximum available gain and maximum stable gain.

    G_ma is defined only where K >= 1 and G_ms only where S12 != 0; other
    entries are NaN. Gains are linear power ratios.
    """
    s = np.asarray(s, dtype=complex)
    s11, s12, s21, s22 = s[..., 0, 0], s[..., 0, 1], s[..., 1, 0], s[..., 1, 1]
    delta = s11 * s22 - s12 * s21
    with np.errstate(divide="ignore", invalid="ignore"):
        k = (1.0 - np.abs(s11) ** 2 - np.abs(s22) ** 2 + np.abs(delta) ** 2) / (
            2.0 * np.abs(s12 * s21)
        )
        gms = np.where(np.abs(s12) > 0, np.abs(s21) / np.abs(s12), np.nan)
        gma = np.where(k >= 1.0, gms * (k - np.sqrt(np.maximum(k**2 - 1.0, 0.0))), np.nan)
    if np.any(np.abs(s12) == 0):
        logger.warning("S12 vanishes at %d frequencies; G_ms undefined there", np.sum(s12 == 0))
    return k, gma, gms


def to_db(gain: np.ndarray, power: bool = True) -> np.ndarray:
    factor = 10.0 if power else 20.0
    gain = np.asarray(gain, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(gain > 0, factor * np.log10(gain), np.nan)


def fom_extract(frequencies: np.ndarray, gain_db: np.ndarray) -> FigureOfMerit:
    """Unity-gain frequency of a gain curve in dB.

    The on-grid value interpolates the first downward 0 dB crossing linearly
    in log f. The extrapolated value follows a -20 dB/dec roll-off from the
    sample about a decade below the crossing, or from the last sample when
    the curve never crosses. ``value`` is the on-grid crossing when one
    exists.

    A curve that never rises above 0 dB is not determinable whatever its
    slope at the grid end.
    """
    frequencies = np.asarray(frequencies, dtype=float)
    gain_db = np.asarray(gain_db, dtype=float)
    valid = np.isfinite(gain_db)
    f, g = frequencies[valid], gain_db[valid]
    if len(g) == 0 or np.max(g) <= 0:
        return FigureOfMerit(None, False, reason="not determinable: gain never above 0 dB")

    log_f = np.log10(f)
    on_grid = None
    crossings = np.flatnonzero((g[:-1] > 0) & (g[1:] <= 0))
    if len(crossings):
        i = crossings[0]
        fraction = g[i] / (g[i] - g[i + 1])
        on_grid = float(10 ** (log_f[i] + fraction * (log_f[i + 1] - log_f[i])))
        below = np.flatnonzero((f <= on_grid / 10.0) & (g > 0))
        reference = below[-1] if len(below) else i
    else:
        if len(g) < 2 or g[-1] - g[-2] >= 0:
            return FigureOfMerit(
                None, False, reason="not determinable: gain not rolling off at the grid end"
            )
        reference = len(g) - 1

    extrapolated_value = float(f[reference] * 10 ** (g[reference] / -ROLL_OFF))
    if on_grid is not None:
        return FigureOfMerit(
            on_grid, False, on_grid=on_grid, extrapolated_value=extrapolated_value
        )
    return FigureOfMerit(
        extrapolated_value,
        True,
        extrapolated_value=extrapolated_value,
        reason="crossing beyond the solved grid",
    )


def quasi_static_foms(
    g_m: float, c_gs: float, c_gd: float, r_g: float, r_out: float
) -> Tuple[float, float]:
    """Cut-off and maximum oscillation frequency estimates from lumped values.

    Args:
        g_m: Transconductance (S)
        c_gs: Gate-source capacitance (F)
        c_gd: Gate-drain capacitance (F)
        r_g: Gate resistance (ohm)
        r_out: Output resistance (ohm)

    Returns:
        (f_t, f_max) in Hz, f_max = (f_t / 2) sqrt(g_m R_g / (C_gd R_out)).
    """
    f_t = g_m / (2.0 * np.pi * (c_gs + c_gd))
    f_max = 0.5 * f_t * np.sqrt(g_m * r_g / (c_gd * r_out))
    return float(f_t), float(f_max)


def lumped_elements(
    frequencies: np.ndarray, y: np.ndarray, gate_resistance: float, width_mm: float
) -> Dict[str, float]:
    """g_m, C_gs, C_gd, R_out and R_g read from Y at the lowest frequency."""
    omega = 2.0 * np.pi * frequencies[0]
    low = y[0]
    return {
        "g_m": float(low[1, 0].real),
        "c_gs": float((low[0, 0] + low[0, 1]).imag / omega),
        "c_gd": float(-low[0, 1].imag / omega),
        "r_out": float(1.0 / low[1, 1].real) if low[1, 1].real != 0 else float("inf"),
        "r_g": gate_resistance / width_mm,
    }


def stability_frequency(frequencies: np.ndarray, k: np.ndarray) -> Optional[float]:
    """First frequency where K rises through 1, interpolated in log f."""
    valid = np.isfinite(k)
    f, k = np.asarray(frequencies)[valid], np.asarray(k)[valid]
    crossings = np.flatnonzero((k[:-1] < 1.0) & (k[1:] >= 1.0))
    if not len(crossings):
        return None
    i = crossings[0]
    fraction = (1.0 - k[i]) / (k[i + 1] - k[i])
    return float(10 ** (np.log10(f[i]) + fraction * (np.log10(f[i + 1]) - np.log10(f[i]))))


def operating_point(
    solver: DriftDiffusionSolver, sweep: AcSweep, equilibrium: Optional[SolutionState] = None
) -> SolutionState:
    state = equilibrium or solver.solve_equilibrium()
    state = solver.ramp({"gate": sweep.v_gs}, state)
    return solver.ramp({"gate": sweep.v_gs, "drain": sweep.v_ds}, state)


def ac_spectrum(
    solver: DriftDiffusionSolver,
    sweep: Optional[AcSweep] = None,
    state: Optional[SolutionState] = None,
    workers: int = 1,
) -> TwoPortSpectrum:
    """Full two-port characterization at the sweep's operating point.

    Raises:
        ConvergenceError: If the operating point cannot be reached
        SingularNetworkError: From the AC solve or the Y to S conversion
    """
    sweep = sweep or AcSweep()
    if state is None:
        state = operating_point(solver, sweep)
    frequencies = sweep.frequencies
    y = ac_solve(solver, state, frequencies, workers)
    s = y_to_s(y, sweep.z0)
    k, gma, gms = stability_gains(s)
    h21_db = to_db(current_gain(y), power=False)
    u_db = to_db(mason_gain(y))
    spectrum = TwoPortSpectrum(
        frequencies=frequencies,
        y=y,
        s=s,
        h21_db=h21_db,
        u_db=u_db,
        k=k,
        gma_db=to_db(gma),
        gms_db=to_db(gms),
        f_t=fom_extract(frequencies, h21_db),
        f_max=fom_extract(frequencies, u_db),
        z0=sweep.z0,
        operating_point={
            "v_gs": sweep.v_gs,
            "v_ds": sweep.v_ds,
            "i_d": state.drain_current,
        },
        stability_frequency=stability_frequency(frequencies, k),
    )
    logger.info("f_t = %s Hz, f_max = %s Hz", spectrum.f_t.value, spectrum.f_max.value)
    return spectrum


def spectrum_table(spectrum: TwoPortSpectrum) -> pd.DataFrame:
    columns: Dict[str, np.ndarray] = {"f": spectrum.frequencies}
    for label, matrix in (("y", spectrum.y), ("s", spectrum.s)):
        for i in range(2):
            for j in range(2):
                columns[f"re_{label}{i + 1}{j + 1}"] = matrix[:, i, j].real
                columns[f"im_{label}{i + 1}{j + 1}"] = matrix[:, i, j].imag
    columns.update(
        h21_db=spectrum.h21_db,
        u_db=spectrum.u_db,
        k=spectrum.k,
        gma_db=spectrum.gma_db,
        gms_db=spectrum.gms_db,
    )
    return pd.DataFrame(columns)


def write_touchstone(spectrum: TwoPortSpectrum, path: Union[str, Path]) -> Path:
    """Write the S-parameters as a magnitude-angle .s2p file.

    Returns:
        Path of the written file.
    """
    path = Path(path)
    frequency = rf.Frequency.from_f(spectrum.frequencies, unit="Hz")
    network = rf.Network(frequency=frequency, s=spectrum.s, z0=spectrum.z0, name=path.stem)
    network.write_touchstone(
        filename=path.stem, dir=str(path.parent), form="ma", skrf_comment=False
    )
    written = path.parent / f"{path.stem}.s2p"
    logger.info("Wrote %s", written)
    return written
