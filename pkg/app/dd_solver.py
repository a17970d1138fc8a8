import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy import constants
from scipy.sparse.linalg import splu, spsolve

from app.data_types import ConvergenceError, ConvergenceReport, SolutionState
from app.dd_discretization import Q, TERMINAL_CODES, DeviceDiscretization
from app.dd_physics import bernoulli
from app.device_mesh import Mesh2D
from app.materials_dao import MaterialsDAO
from app.models import PhysicsConfig

logger = logging.getLogger(__name__)

POISSON_MAX_STEPS = 100
DENSITY_FLOOR = 1e-100
# Quasi-Fermi updates only count where the carrier is present
ACTIVE_DENSITY = 1.0
MIN_BIAS_STEP = 1e-3


class DriftDiffusionSolver:
    """Coupled Poisson and electron/hole drift-diffusion on one device mesh.

    The mesh, physics switches and materials are fixed at construction; every
    solve returns a fresh SolutionState and leaves the solver untouched, so one
    instance can serve a whole continuation ladder.
    """

    def __init__(
        self,
        mesh: Mesh2D,
        physics: Optional[PhysicsConfig] = None,
        materials: Optional[MaterialsDAO] = None,
    ):
        """Initialize the solver.

        Args:
            mesh: Device mesh
            physics: Model switches and tolerances
            materials: Parameter database; loaded from the default file when omitted
        """
        self.mesh = mesh
        self.physics = physics or PhysicsConfig()
        self.materials = materials or MaterialsDAO.from_file()
        self.grid = DeviceDiscretization(mesh, self.materials, self.physics)

    def solve_equilibrium(self) -> SolutionState:
        """Zero-bias solution with flat quasi-Fermi levels.

        Raises:
            ConvergenceError: If the nonlinear Poisson solve does not converge
        """
        grid = self.grid
        biases = self._normalize({})
        psi_fixed, _ = grid.boundary_values(biases)
        psi = self._initial_potential(psi_fixed)
        zeros = np.zeros(grid.size)
        psi, history = self._solve_poisson(psi, zeros, zeros, psi_fixed, biases)
        report = ConvergenceReport(
            converged=True, newton_iterations=len(history), history=history
        )
        state = self._state(psi, zeros, zeros, biases, report)
        logger.info("Equilibrium converged in %d Newton steps", len(history))
        return state

    def solve_bias(
        self, biases: Dict[str, float], seed: Optional[SolutionState] = None
    ) -> SolutionState:
        """Solve one bias point by Gummel iteration followed by Newton.

        Args:
            biases: Terminal voltages keyed by source, drain and gate; missing ones are 0
            seed: Converged state at a nearby bias; equilibrium when omitted

        Returns:
            The converged state.

        Raises:
            ConvergenceError: Carrying the bias point and the update history, also
                when the terminal currents violate Kirchhoff's law
        """
        grid = self.grid
        biases = self._normalize(biases)
        if seed is None:
            seed = self.solve_equilibrium()
        psi_fixed, phi_fixed = grid.boundary_values(biases)

        psi = np.where(grid.fixed_psi, psi_fixed, seed.psi)
        phi_n = np.where(grid.fixed_phi, phi_fixed, seed.phi_n)
        phi_p = np.where(grid.fixed_phi, phi_fixed, seed.phi_p)

        psi, phi_n, phi_p, gummel_history = self._gummel(
            psi, phi_n, phi_p, psi_fixed, phi_fixed, biases
        )
        psi, phi_n, phi_p, newton_history = self._newton(
            psi, phi_n, phi_p, psi_fixed, phi_fixed, biases
        )
        report = ConvergenceReport(
            converged=True,
            gummel_iterations=len(gummel_history),
            newton_iterations=len(newton_history),
            history=gummel_history + newton_history,
        )
        state = self._state(psi, phi_n, phi_p, biases, report)
        if state.kirchhoff_error > self.physics.current_tolerance:
            raise ConvergenceError(
                f"Terminal currents at {_format_biases(biases)} violate Kirchhoff "
                f"by {state.kirchhoff_error:.2e}",
                history=report.history,
                bias=biases,
            )
        logger.info(
            "Converged at %s: I_d = %.6g mA (%d Gummel, %d Newton)",
            _format_biases(biases),
            state.drain_current,
            len(gummel_history),
            len(newton_history),
        )
        return state

    def ramp(
        self,
        target: Dict[str, float],
        seed: SolutionState,
        max_step: Optional[float] = None,
        min_step: float = MIN_BIAS_STEP,
    ) -> SolutionState:
        """Continue from a converged state to a target bias.

        Steps are chopped to ``max_step`` volts on the terminal that moves
        most, halved on failure and grown again after each success.

        Raises:
            ConvergenceError: If the step falls below ``min_step``
        """
        max_step = max_step or self.physics.max_bias_step
        target = self._normalize(target)
        current = self._normalize(seed.biases)
        state = seed
        step = max_step
        while True:
            difference = {name: target[name] - current[name] for name in target}
            largest = max(abs(value) for value in difference.values())
            if largest < 1e-12:
                return state
            fraction = min(1.0, step / largest)
            if fraction >= 1.0:
                trial = dict(target)
            else:
                trial = {
                    name: current[name] + fraction * difference[name] for name in target
                }
            try:
                state = self.solve_bias(trial, state)
                current = trial
                step = min(max_step, step * 1.5)
            except ConvergenceError as e:
                step /= 2.0
                logger.warning(
                    "No convergence at %s; halving step to %.4g V", _format_biases(trial), step
                )
                if step < min_step:
                    raise ConvergenceError(
                        f"Bias ramp stalled at {_format_biases(current)} "
                        f"while heading to {_format_biases(target)}",
                        history=e.history,
                        bias=trial,
                    ) from e

    def electron_temperature_post(self, state: SolutionState) -> np.ndarray:
        """Electron temperature from the steady energy balance on a frozen state.

        The energy flux carries a Wiedemann-Franz conduction term and a
        convection term moving with the electron particle flux; Joule heating
        J.E is balanced by relaxation to the lattice over the energy
        relaxation time. Contacts and non-semiconductor nodes sit at the
        lattice temperature.

        Returns:
            Electron temperature per node in K.
        """
        grid = self.grid
        lattice = self.physics.lattice_temperature
        tau = self.physics.energy_relaxation_time
        kb = constants.k

        n, p = grid.densities(state.psi, state.phi_n, state.phi_p)
        fl = grid.fluxes(state.psi, state.phi_n, state.phi_p, n, p)
        k, l, h, w = grid.t_tail, grid.t_head, grid.t_h, grid.t_w

        n_edge = 0.5 * (n[k] + n[l])
        kappa = np.maximum(2.5 * kb**2 / Q * n_edge * fl.mobility_n * lattice, 1e-300)
        # fl.jn is conventional current from tail to head; the electron flux and the
        # heat it carries run the other way, hence the minus sign
        velocity = -2.5 * kb / Q * fl.jn
        peclet = velocity * h / kappa
        forward = w * kappa / h * bernoulli(-peclet)
        backward = w * kappa / h * bernoulli(peclet)

        joule = fl.jn * (-(state.psi[l] - state.psi[k]) / h) * grid.t_volume
        source = np.bincount(k, joule, grid.size) + np.bincount(l, joule, grid.size)
        relaxation = 1.5 * kb * n * grid.area / tau

        index = np.arange(grid.size)
        rows = np.concatenate([k, k, l, l, index])
        cols = np.concatenate([k, l, k, l, index])
        vals = np.concatenate([forward, -backward, -forward, backward, relaxation])
        rhs = source + relaxation * lattice

        fixed = ~grid.free_sc
        keep = ~fixed[rows]
        pinned = np.flatnonzero(fixed)
        matrix = sp.csc_matrix(
            (
                np.concatenate([vals[keep], np.ones(len(pinned))]),
                (np.concatenate([rows[keep], pinned]), np.concatenate([cols[keep], pinned])),
            ),
            shape=(grid.size, grid.size),
        )
        rhs[fixed] = lattice
        temperature = spsolve(matrix, rhs)
        if not np.all(np.isfinite(temperature)):
            raise ConvergenceError(
                "Energy balance solve produced non-finite temperatures", bias=state.biases
            )
        return temperature

    def field_dump(self, state: SolutionState) -> pd.DataFrame:
        """Node table with x, y (um), psi (V), n, p (cm^-3), field (MV/cm) and T_n (K)."""
        xs, ys = self.mesh.node_coordinates()
        temperature = (
            state.electron_temperature
            if state.electron_temperature is not None
            else np.full(self.grid.size, np.nan)
        )
        semiconductor = self.grid.is_sc
        return pd.DataFrame(
            {
                "x": xs,
                "y": ys,
                "psi": state.psi,
                "n": np.where(semiconductor, state.n, np.nan),
                "p": np.where(semiconductor, state.p, np.nan),
                "field": state.field,
                "T_n": np.where(semiconductor, temperature, np.nan),
            }
        )

    def _normalize(self, biases: Dict[str, float]) -> Dict[str, float]:
        return {name: float(biases.get(name, 0.0)) for name in TERMINAL_CODES}

    def _initial_potential(self, psi_fixed: np.ndarray) -> np.ndarray:
        grid = self.grid
        psi = grid.neutral_psi.copy()
        if self.mesh.surface_row is not None:
            columns = np.arange(grid.size) % self.mesh.nx
            surface = grid.neutral_psi[self.mesh.surface_row * self.mesh.nx + columns]
            psi = np.where(grid.is_sc, psi, surface)
        return np.where(grid.fixed_psi, psi_fixed, psi)

    def _solve_poisson(
        self,
        psi: np.ndarray,
        phi_n: np.ndarray,
        phi_p: np.ndarray,
        psi_fixed: np.ndarray,
        biases: Dict[str, float],
    ) -> Tuple[np.ndarray, List[float]]:
        history: List[float] = []
        for _ in range(POISSON_MAX_STEPS):
            residual, jacobian = self.grid.poisson_system(psi, phi_n, phi_p, psi_fixed)
            delta = self._linear_solve(jacobian, -residual, biases)
            delta = np.clip(delta, -self.physics.max_update, self.physics.max_update)
            psi = psi + delta
            update = float(np.max(np.abs(delta)))
            history.append(update)
            if update < self.physics.potential_tolerance:
                return psi, history
        raise ConvergenceError(
            f"Poisson did not converge in {POISSON_MAX_STEPS} steps "
            f"(last update {history[-1]:.3e} V)",
            history=history,
            bias=biases,
        )

    def _gummel(
        self,
        psi: np.ndarray,
        phi_n: np.ndarray,
        phi_p: np.ndarray,
        psi_fixed: np.ndarray,
        phi_fixed: np.ndarray,
        biases: Dict[str, float],
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, List[float]]:
        grid, vt = self.grid, self.grid.vt
        present = [
            biases[name] for name, nodes in grid.contacts.items() if len(nodes)
        ] or [0.0]
        low, high = min(present), max(present)
        free = grid.free_sc
        n_contact, p_contact = grid.densities(psi_fixed, phi_fixed, phi_fixed)

        history: List[float] = []
        for iteration in range(1, self.physics.max_gummel_iterations + 1):
            psi_new, _ = self._solve_poisson(psi, phi_n, phi_p, psi_fixed, biases)
            n, p = grid.densities(psi_new, phi_n, phi_p)
            generation = grid.node_generation(grid.fluxes(psi_new, phi_n, phi_p, n, p))

            matrix, rhs = grid.continuity_system(
                "n", psi_new, p, grid.lifetime_factor(n, p), generation, n_contact
            )
            n_new = np.maximum(spsolve(matrix, rhs), DENSITY_FLOOR)
            phi_n_new = psi_new + grid.chi - vt * np.log(n_new / grid.nc)
            phi_n_new = np.where(free, np.clip(phi_n_new, low, high), phi_fixed)

            matrix, rhs = grid.continuity_system(
                "p", psi_new, n_new, grid.lifetime_factor(n_new, p), generation, p_contact
            )
            p_new = np.maximum(spsolve(matrix, rhs), DENSITY_FLOOR)
            phi_p_new = psi_new + grid.chi + grid.eg + vt * np.log(p_new / grid.nv)
            phi_p_new = np.where(free, np.clip(phi_p_new, low, high), phi_fixed)

            update = max(
                float(np.max(np.abs(psi_new - psi))),
                _masked_max(phi_n_new - phi_n, free & (n_new > ACTIVE_DENSITY)),
                _masked_max(phi_p_new - phi_p, free & (p_new > ACTIVE_DENSITY)),
            )
            psi, phi_n, phi_p = psi_new, phi_n_new, phi_p_new
            history.append(update)
            logger.debug("Gummel %d: update %.3e V", iteration, update)
            if update < self.physics.gummel_tolerance:
                break
            if iteration > 3 and update > 10.0 * history[0]:
                logger.warning("Gummel diverging at %s; handing over to Newton", biases)
                break
        else:
            logger.warning(
                "Gummel reached %d iterations at %s; handing over to Newton",
                self.physics.max_gummel_iterations,
                _format_biases(biases),
            )
        return psi, phi_n, phi_p, history

    def _newton(
        self,
        psi: np.ndarray,
        phi_n: np.ndarray,
        phi_p: np.ndarray,
        psi_fixed: np.ndarray,
        phi_fixed: np.ndarray,
        biases: Dict[str, float],
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, List[float]]:
        grid = self.grid
        size = grid.size
        history: List[float] = []
        for step in range(1, self.physics.max_newton_steps + 1):
            residual, jacobian = grid.system(psi, phi_n, phi_p, psi_fixed, phi_fixed)
            scale = _row_scale(jacobian)
            delta = self._linear_solve(
                sp.diags(scale) @ jacobian, -scale * residual, biases
            )
            delta = np.clip(delta, -self.physics.max_update, self.physics.max_update)

            norm0 = np.linalg.norm(scale * residual)
            damping = 1.0
            for attempt in range(4):
                trial = (
                    psi + damping * delta[:size],
                    phi_n + damping * delta[size : 2 * size],
                    phi_p + damping * delta[2 * size :],
                )
                trial_residual, _ = grid.system(*trial, psi_fixed, phi_fixed, jacobian=False)
                if np.linalg.norm(scale * trial_residual) <= norm0 or attempt == 3:
                    break
                damping /= 2.0
            psi, phi_n, phi_p = trial

            n, p = grid.densities(psi, phi_n, phi_p)
            free = grid.free_sc
            update = max(
                float(np.max(np.abs(delta[:size]))),
                _masked_max(delta[size : 2 * size], free & (n > ACTIVE_DENSITY)),
                _masked_max(delta[2 * size :], free & (p > ACTIVE_DENSITY)),
            )
            history.append(update)
            logger.debug("Newton %d: update %.3e V, damping %.3g", step, update, damping)
            if update < self.physics.potential_tolerance:
                return psi, phi_n, phi_p, history
        raise ConvergenceError(
            f"Newton did not converge in {self.physics.max_newton_steps} steps at "
            f"{_format_biases(biases)} (last update {history[-1]:.3e} V)",
            history=history,
            bias=biases,
        )

    @staticmethod
    def _linear_solve(
        matrix: sp.spmatrix, rhs: np.ndarray, biases: Dict[str, float]
    ) -> np.ndarray:
        try:
            solution = splu(sp.csc_matrix(matrix)).solve(rhs)
        except RuntimeError as e:
            raise ConvergenceError(f"Singular Jacobian: {e}", bias=biases) from e
        if not np.all(np.isfinite(solution)):
            raise ConvergenceError("Non-finite Newton update", bias=biases)
        return solution

    def _state(
        self,
        psi: np.ndarray,
        phi_n: np.ndarray,
        phi_p: np.ndarray,
        biases: Dict[str, float],
        report: ConvergenceReport,
    ) -> SolutionState:
        grid = self.grid
        n, p = grid.densities(psi, phi_n, phi_p)
        currents = grid.terminal_currents(grid.fluxes(psi, phi_n, phi_p, n, p))
        return SolutionState(
            psi=psi,
            phi_n=phi_n,
            phi_p=phi_p,
            n=np.where(grid.is_sc, n, 0.0),
            p=np.where(grid.is_sc, p, 0.0),
            currents=currents,
            field=grid.node_field(psi),
            biases=dict(biases),
            report=report,
        )


def _masked_max(values: np.ndarray, mask: np.ndarray) -> float:
    if not np.any(mask):
        return 0.0
    return float(np.max(np.abs(values[mask])))


def _row_scale(matrix: sp.spmatrix) -> np.ndarray:
    """Reciprocal of each row's largest magnitude; empty rows keep unit scale."""
    largest = abs(sp.csr_matrix(matrix)).max(axis=1).toarray().ravel()
    return 1.0 / np.where(largest > 0, largest, 1.0)


def _format_biases(biases: Dict[str, float]) -> str:
    return ", ".join(f"V_{name[0]} = {value:.4g} V" for name, value in biases.items())
