import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import constants
from scipy.integrate import trapezoid
from scipy.linalg import LinAlgError, eigh_tridiagonal, solve_banded

from app.data_types import (
    BandDiagram1D,
    ConvergenceError,
    Layer,
    LayerStack1D,
    SchrodingerError,
    SpecValidationError,
)
from app.materials_dao import MaterialsDAO, effective_dos
from app.models import BandConfig, DeviceSpec

logger = logging.getLogger(__name__)

# hbar^2 / 2 m0 in eV nm^2
KINETIC = constants.hbar**2 / (2.0 * constants.m_e) / constants.e * 1e18
# q / eps0 in V cm
Q_OVER_EPS0 = constants.e / (constants.epsilon_0 * 1e-2)
NM_TO_CM = 1e-7
EXP_LIMIT = 690.0
INNER_TOLERANCE = 1e-10
INNER_MAX_STEPS = 200
MAX_POTENTIAL_STEP = 0.25
PINCH_OFF_DENSITY = 1e10
# Charge neutrality: relative tolerance and the sheet density (cm^-2) it is relative to at least
NEUTRALITY_TOLERANCE = 1e-4
NEUTRALITY_FLOOR = 1e8


def solve_schrodinger(
    z: np.ndarray, potential: np.ndarray, mass: np.ndarray, n_states: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Lowest bound states of the effective-mass Hamiltonian.

    The operator -d/dz (hbar^2 / 2m(z)) d/dz + V(z) is discretized on the given
    (possibly non-uniform) grid with the envelope held at zero on the first and
    last node.

    Args:
        z: Node positions in nm, strictly increasing, at least 50 nodes
        potential: Potential energy per node in eV
        mass: Effective mass per node in units of m0
        n_states: Number of eigenpairs to return

    Returns:
        (energies in eV ascending, wavefunctions of shape (n_states, len(z)) in
        nm^-1/2 normalized so that the trapezoidal integral of psi^2 is one)

    Raises:
        ValueError: If the grid or the state count is invalid
        SchrodingerError: If the eigensolve fails or its residuals are too large
    """
    z = np.asarray(z, dtype=float)
    potential = np.asarray(potential, dtype=float)
    mass = np.broadcast_to(np.asarray(mass, dtype=float), z.shape)
    if len(z) < 50:
        raise ValueError(f"Schrodinger grid needs at least 50 nodes, got {len(z)}")
    if n_states < 1:
        raise ValueError(f"n_states must be >= 1, got {n_states}")

    h = np.diff(z)
    w = 0.5 * (h[:-1] + h[1:])
    coupling = KINETIC / (0.5 * (mass[:-1] + mass[1:]) * h)
    diag = (coupling[:-1] + coupling[1:]) / w + potential[1:-1]
    off = -coupling[1:-1] / np.sqrt(w[:-1] * w[1:])
    n_states = min(n_states, len(diag))

    try:
        energies, phi = eigh_tridiagonal(
            diag, off, select="i", select_range=(0, n_states - 1)
        )
    except (LinAlgError, ValueError) as e:
        raise SchrodingerError(f"Eigensolve failed: {e}") from e

    applied = diag[:, None] * phi
    applied[:-1] += off[:, None] * phi[1:]
    applied[1:] += off[:, None] * phi[:-1]
    residuals = np.linalg.norm(applied - phi * energies, axis=0)
    scale = max(1.0, float(np.max(np.abs(diag))))
    if not np.all(np.isfinite(energies)) or np.any(residuals > 1e-8 * scale):
        raise SchrodingerError("Eigenpairs did not converge", residuals=residuals.tolist())

    wavefunctions = np.zeros((n_states, len(z)))
    wavefunctions[:, 1:-1] = (phi / np.sqrt(w)[:, None]).T
    for state in wavefunctions:
        if state[np.argmax(np.abs(state))] < 0:
            state *= -1.0
    return energies, wavefunctions


@dataclass
class _StackGrid:
    z: np.ndarray  # nm
    h: np.ndarray  # cm, per interval
    w: np.ndarray  # cm, dual length per node
    eps: np.ndarray  # per interval
    chi: np.ndarray
    eg: np.ndarray
    me: np.ndarray
    nc: np.ndarray
    nv: np.ndarray
    doping: np.ndarray  # dual-cell average, cm^-3
    sheet: np.ndarray  # cm^-2
    window: Tuple[int, int]
    channel: Tuple[int, int]
    channel_mass: float


def validate_stack(stack: LayerStack1D) -> None:
    """Raises SpecValidationError listing every problem with the stack."""
    errors: List[str] = []
    if len(stack.layers) < 2:
        errors.append(f"a stack needs at least 2 layers, got {len(stack.layers)}")
    for layer in stack.layers:
        if layer.thickness <= 0:
            errors.append(f"layer '{layer.name}' thickness must be > 0, got {layer.thickness}")
    if len(stack.sheet_charges) != max(len(stack.layers) - 1, 0):
        errors.append(
            f"expected {len(stack.layers) - 1} interface sheet charge(s), "
            f"got {len(stack.sheet_charges)}"
        )
    if (stack.work_function is None) == (stack.surface_barrier is None):
        errors.append("set exactly one of work_function or surface_barrier")
    if stack.temperature <= 0:
        errors.append(f"temperature must be > 0, got {stack.temperature}")
    if errors:
        raise SpecValidationError(errors)


def gate_stack(
    spec: DeviceSpec, materials: MaterialsDAO, temperature: float = 300.0
) -> LayerStack1D:
    """Vertical cut under the gate: barrier over channel with a Schottky top."""
    barrier = materials.alloy_params(spec.al_fraction)
    sigma = materials.polarization_sheet_charge(spec.al_fraction, spec.relaxation)
    return LayerStack1D(
        layers=(
            Layer("barrier", barrier, spec.barrier_thickness, spec.barrier_doping),
            Layer("channel", materials.gan, spec.channel_thickness, spec.channel_doping),
        ),
        sheet_charges=(sigma,),
        work_function=spec.work_function,
        temperature=temperature,
    )


class SchrodingerPoissonSolver:
    """Self-consistent Schrodinger-Poisson solver for a vertical layer stack.

    Electrons inside the quantum window around the lowest heterojunction are
    taken from the occupied subbands; everywhere else both carriers follow
    Boltzmann statistics. The Fermi level is the energy zero.
    """

    def __init__(self, config: Optional[BandConfig] = None):
        self.config = config or BandConfig()

    def solve_sp(
        self, stack: LayerStack1D, gate_bias: float = 0.0, temperature: Optional[float] = None
    ) -> BandDiagram1D:
        """Solve one gate bias.

        Args:
            stack: Layer stack, surface first
            gate_bias: Gate voltage in V, applied through the Schottky boundary
            temperature: Lattice temperature in K; defaults to the stack's

        Returns:
            The converged band diagram.

        Raises:
            SpecValidationError: If the stack is invalid
            ConvergenceError: If the outer loop exceeds its iteration cap
            SchrodingerError: If an eigensolve fails
        """
        validate_stack(stack)
        temperature = temperature or stack.temperature
        vt = constants.k * temperature / constants.e
        grid = self._build_grid(stack, temperature)

        if stack.work_function is not None:
            psi_top = gate_bias - stack.work_function
        else:
            psi_top = -stack.surface_barrier - grid.chi[0]

        psi = self._initial_potential(grid, vt, psi_top)
        psi = self._solve_poisson(grid, vt, psi, psi_top)

        history: List[float] = []
        for iteration in range(1, self.config.max_iterations + 1):
            energies, wavefunctions, n_quantum = self._subbands(grid, vt, psi)
            updated = self._solve_poisson(grid, vt, psi, psi_top, n_quantum, psi)
            update = float(np.max(np.abs(updated - psi)))
            history.append(update)
            psi = updated
            logger.debug("SP iteration %d: update %.3e V", iteration, update)
            if update < self.config.tolerance:
                break
        else:
            raise ConvergenceError(
                f"Schrodinger-Poisson loop did not converge in {self.config.max_iterations} "
                f"iterations (last update {history[-1]:.3e} V)",
                history=history,
                bias={"gate": gate_bias},
            )

        energies, wavefunctions, n_quantum = self._subbands(grid, vt, psi)
        n, _ = self._electrons(grid, vt, psi, n_quantum, psi)
        p = self._holes(grid, vt, psi)
        ec = -psi - grid.chi

        coupling = grid.eps[0] / grid.h[0]
        rho = grid.w * (p - n + grid.doping) + grid.sheet
        gate_charge = -(coupling * (psi[1] - psi[0]) / Q_OVER_EPS0 + rho[0])
        scale = max(
            float(np.sum(np.abs(grid.sheet))),
            float(np.sum(grid.w * n)),
            abs(gate_charge),
            NEUTRALITY_FLOOR,
        )
        imbalance = abs(gate_charge + float(np.sum(rho))) / scale
        if imbalance > NEUTRALITY_TOLERANCE:
            logger.warning(
                "SP solution at V_g = %.3f V is not neutral: imbalance %.2e", gate_bias, imbalance
            )

        full_wavefunctions = np.zeros((len(energies), len(grid.z)))
        i0, i1 = grid.window
        full_wavefunctions[:, i0 : i1 + 1] = wavefunctions

        logger.info(
            "SP converged at V_g = %.3f V after %d iterations", gate_bias, len(history)
        )
        return BandDiagram1D(
            z=grid.z,
            ec=ec,
            ev=ec - grid.eg,
            n=n,
            p=p,
            field=-np.gradient(psi, grid.z * NM_TO_CM) * 1e-6,
            psi=psi,
            energies=energies,
            wavefunctions=full_wavefunctions,
            gate_bias=gate_bias,
            channel_bounds=(float(grid.z[grid.channel[0]]), float(grid.z[grid.channel[1]])),
            quantum_window=(float(grid.z[i0]), float(grid.z[i1])),
            gate_charge=float(gate_charge),
            iterations=len(history),
            charge_imbalance=imbalance,
        )

    def ns_sweep(
        self, stack: LayerStack1D, gate_biases: Sequence[float], workers: int = 1
    ) -> Tuple[pd.DataFrame, Optional[float]]:
        """Sheet density versus gate bias from independent solves.

        Args:
            stack: Layer stack with a Schottky top
            gate_biases: Gate voltages in V
            workers: Thread count; results keep the input order

        Returns:
            (table with columns gate_bias, n_s, converged; the highest gate bias
            whose sheet density falls below 1e10 cm^-2, or None)
        """

        def run(bias: float) -> Tuple[float, float, bool]:
            try:
                return bias, sheet_density(self.solve_sp(stack, bias)), True
            except (ConvergenceError, SchrodingerError) as e:
                logger.warning("SP solve failed at V_g = %.3f V: %s", bias, e)
                return bias, float("nan"), False

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                rows = list(executor.map(run, gate_biases))
        else:
            rows = [run(bias) for bias in gate_biases]

        table = pd.DataFrame(rows, columns=["gate_bias", "n_s", "converged"])
        depleted = table[table["converged"] & (table["n_s"] < PINCH_OFF_DENSITY)]
        pinch_off = float(depleted["gate_bias"].max()) if len(depleted) else None
        return table, pinch_off

    def _build_grid(self, stack: LayerStack1D, temperature: float) -> _StackGrid:
        spacing = self.config.grid_spacing
        z = [0.0]
        interval_layer: List[int] = []
        top = 0.0
        for index, layer in enumerate(stack.layers):
            count = max(2, int(np.ceil(layer.thickness / spacing - 1e-9)))
            z.extend(np.linspace(top, top + layer.thickness, count + 1)[1:])
            interval_layer.extend([index] * count)
            top += layer.thickness
        z = np.asarray(z)
        interval_layer = np.asarray(interval_layer)
        node_layer = np.append(interval_layer, interval_layer[-1])

        h = np.diff(z) * NM_TO_CM
        w = np.zeros(len(z))
        w[:-1] += 0.5 * h
        w[1:] += 0.5 * h

        layer_doping = np.array([layer.doping for layer in stack.layers])
        charge = np.zeros(len(z))
        charge[:-1] += 0.5 * h * layer_doping[interval_layer]
        charge[1:] += 0.5 * h * layer_doping[interval_layer]

        def per_node(attribute: str) -> np.ndarray:
            values = np.array([getattr(layer.params, attribute) for layer in stack.layers])
            return values[node_layer]

        me = per_node("me")
        mh = per_node("mh")
        sheet = np.zeros(len(z))
        boundaries = np.cumsum([0] + [np.sum(interval_layer == k) for k in range(len(stack.layers))])
        for k, sigma in enumerate(stack.sheet_charges):
            sheet[boundaries[k + 1]] += sigma / constants.e

        het = boundaries[-2]
        z_het = z[het]
        i0 = int(np.searchsorted(z, z_het - self.config.barrier_window - 1e-9))
        i1 = int(np.searchsorted(z, z_het + self.config.channel_window + 1e-9)) - 1
        i1 = min(max(i1, i0 + 49), len(z) - 1)
        i0 = max(0, min(i0, i1 - 49))

        return _StackGrid(
            z=z,
            h=h,
            w=w,
            eps=np.array([layer.params.eps_r for layer in stack.layers])[interval_layer],
            chi=per_node("chi"),
            eg=per_node("eg"),
            me=me,
            nc=np.array([effective_dos(m, temperature) for m in me]),
            nv=np.array([effective_dos(m, temperature) for m in mh]),
            doping=charge / w,
            sheet=sheet,
            window=(i0, i1),
            channel=(int(het), len(z) - 1),
            channel_mass=stack.layers[-1].params.me,
        )

    @staticmethod
    def _initial_potential(grid: _StackGrid, vt: float, psi_top: float) -> np.ndarray:
        ni = np.sqrt(grid.nc * grid.nv) * np.exp(-grid.eg / (2.0 * vt))
        half = 0.5 * grid.doping
        n = half + np.sqrt(half**2 + ni**2)
        psi = vt * np.log(n / grid.nc) - grid.chi
        psi[0] = psi_top
        return psi

    def _subbands(
        self, grid: _StackGrid, vt: float, psi: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        i0, i1 = grid.window
        window = slice(i0, i1 + 1)
        energies, wavefunctions = solve_schrodinger(
            grid.z[window], -psi[window] - grid.chi[window], grid.me[window], self.config.subbands
        )
        # m kT / (pi hbar^2) in m^-2; kT in eV equals vt numerically
        dos = grid.channel_mass * constants.m_e * vt * constants.e / (np.pi * constants.hbar**2)
        occupation = dos * 1e-4 * np.logaddexp(0.0, -energies / vt)
        # |psi|^2 is in nm^-1
        n_quantum = occupation @ (wavefunctions**2) * 1e7
        return energies, wavefunctions, n_quantum

    @staticmethod
    def _holes(grid: _StackGrid, vt: float, psi: np.ndarray) -> np.ndarray:
        return grid.nv * np.exp(np.clip((-psi - grid.chi - grid.eg) / vt, -EXP_LIMIT, EXP_LIMIT))

    @staticmethod
    def _electrons(
        grid: _StackGrid,
        vt: float,
        psi: np.ndarray,
        n_quantum: Optional[np.ndarray] = None,
        psi_ref: Optional[np.ndarray] = None,
    ) -> Tuple[np.ndarray, np.ndarray]:
        n = grid.nc * np.exp(np.clip((psi + grid.chi) / vt, -EXP_LIMIT, EXP_LIMIT))
        if n_quantum is not None:
            i0, i1 = grid.window
            window = slice(i0, i1 + 1)
            shift = np.clip((psi[window] - psi_ref[window]) / vt, -EXP_LIMIT, EXP_LIMIT)
            n[window] = n_quantum * np.exp(shift)
        return n, n / vt

    def _solve_poisson(
        self,
        grid: _StackGrid,
        vt: float,
        psi: np.ndarray,
        psi_top: float,
        n_quantum: Optional[np.ndarray] = None,
        psi_ref: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """Damped Newton on the nonlinear Poisson equation with Dirichlet top and Neumann bottom."""
        psi = psi.copy()
        psi[0] = psi_top
        coupling = grid.eps / grid.h
        size = len(psi)
        for step in range(INNER_MAX_STEPS):
            n, dn = self._electrons(grid, vt, psi, n_quantum, psi_ref)
            p = self._holes(grid, vt, psi)
            dp = -p / vt

            flux = coupling * np.diff(psi)
            residual = np.zeros(size)
            residual[:-1] += flux
            residual[1:] -= flux
            residual += Q_OVER_EPS0 * (grid.w * (p - n + grid.doping) + grid.sheet)
            residual[0] = 0.0

            banded = np.zeros((3, size))
            banded[1] = Q_OVER_EPS0 * grid.w * (dp - dn)
            banded[1, :-1] -= coupling
            banded[1, 1:] -= coupling
            banded[0, 1:] = coupling
            banded[2, :-1] = coupling
            banded[1, 0] = 1.0
            banded[0, 1] = 0.0

            delta = solve_banded((1, 1), banded, -residual)
            delta = np.clip(delta, -MAX_POTENTIAL_STEP, MAX_POTENTIAL_STEP)
            psi += delta
            if np.max(np.abs(delta)) < INNER_TOLERANCE:
                return psi
        raise ConvergenceError(
            f"Poisson Newton did not converge in {INNER_MAX_STEPS} steps",
            history=[float(np.max(np.abs(delta)))],
        )


def sheet_density(bd: BandDiagram1D) -> float:
    """Electron sheet density (cm^-2) integrated over the channel layer."""
    top, bottom = bd.channel_bounds
    inside = (bd.z >= top) & (bd.z <= bottom)
    return float(trapezoid(bd.n[inside], bd.z[inside] * NM_TO_CM))


def band_summary(bd: BandDiagram1D) -> Dict[str, float]:
    """Headline numbers of a band diagram."""
    summary: Dict[str, float] = {
        "gate_bias": bd.gate_bias,
        "n_s": sheet_density(bd),
        "peak_field": float(np.max(np.abs(bd.field))),
        "peak_n": float(np.max(bd.n)),
        "peak_depth": float(bd.z[np.argmax(bd.n)]),
        "gate_charge": bd.gate_charge,
        "iterations": bd.iterations,
    }
    for index, energy in enumerate(bd.energies[:3], start=1):
        summary[f"E{index}"] = float(energy)
    return summary
