"""Finite-volume discretization of Poisson and the carrier continuity equations
on a rectilinear mesh.

Unknowns are the electrostatic potential and the two quasi-Fermi potentials,
stacked as [psi; phi_n; phi_p]. Edge fluxes use exponential fitting
(Scharfetter-Gummel) written in quasi-Fermi form so that no density ratio
can overflow. Lengths inside this module are in cm.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy import constants

from app.dd_physics import (
    DENOMINATOR_FLOOR,
    bernoulli,
    bernoulli_derivative,
    chynoweth_alpha,
    highfield_mobility,
    highfield_mobility_derivative,
)
from app.device_mesh import (
    BARRIER,
    CHANNEL,
    DRAIN,
    GATE,
    NO_TERMINAL,
    PASSIVATION,
    SOURCE,
    Mesh2D,
)
from app.materials_dao import MaterialsDAO, effective_dos
from app.models import PhysicsConfig

logger = logging.getLogger(__name__)

UM_TO_CM = 1e-4
Q = constants.e
# q / eps0 in V cm
Q_OVER_EPS0 = constants.e / (constants.epsilon_0 * 1e-2)
EXP_LIMIT = 690.0
TERMINAL_CODES = {"source": SOURCE, "drain": DRAIN, "gate": GATE}


def sg_edge_flux(
    dens_k: np.ndarray,
    dens_l: np.ndarray,
    delta: np.ndarray,
    dphi: np.ndarray,
    vt: float,
) -> Tuple[np.ndarray, ...]:
    """Exponentially fitted flux from node k to node l, without its prefactor.

    The carrier density is exp((a - phi) / vt) with a the band-edge potential;
    the returned flux G satisfies J = (q mu vt / h) G.

    Args:
        dens_k: Density at the tail node
        dens_l: Density at the head node
        delta: (a_l - a_k) / vt
        dphi: phi_l - phi_k
        vt: Thermal voltage

    Returns:
        (G, dG/da_k, dG/da_l, dG/dphi_k, dG/dphi_l)
    """
    forward = dphi <= 0
    b_fwd, db_fwd = bernoulli(delta), bernoulli_derivative(delta)
    b_bwd, db_bwd = bernoulli(-delta), bernoulli_derivative(-delta)
    e_fwd = np.expm1(np.minimum(dphi, 0.0) / vt)
    e_bwd = np.expm1(np.minimum(-dphi, 0.0) / vt)

    flux = np.where(forward, -b_fwd * dens_l * e_fwd, b_bwd * dens_k * e_bwd)
    d_ak = np.where(
        forward, dens_l * e_fwd * db_fwd / vt, dens_k * e_bwd * (db_bwd + b_bwd) / vt
    )
    d_al = np.where(
        forward, -dens_l * e_fwd * (db_fwd + b_fwd) / vt, -dens_k * e_bwd * db_bwd / vt
    )
    d_pk = np.where(forward, b_fwd * dens_l * (e_fwd + 1.0) / vt, b_bwd * dens_k / vt)
    d_pl = np.where(forward, -b_fwd * dens_l / vt, -b_bwd * dens_k * (e_bwd + 1.0) / vt)
    return flux, d_ak, d_al, d_pk, d_pl


@dataclass
class EdgeFluxes:
    jn: np.ndarray  # A/cm^2, tail to head
    jp: np.ndarray
    field: np.ndarray  # V/cm along the edge
    generation: np.ndarray  # cm^-3 s^-1
    mobility_n: np.ndarray
    derivatives: Optional[Dict[str, Dict[str, np.ndarray]]] = None


def _edge_sums(cell_values: np.ndarray, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Sum cell values times the half-length they contribute to each edge.

    Returns horizontal edges (row-major, ny * (nx - 1)) followed by vertical
    edges ((ny - 1) * nx).
    """
    ny, nx = len(dy) + 1, len(dx) + 1
    rows = np.zeros((ny + 1, nx - 1))
    rows[1:-1] = cell_values
    half_dy = np.zeros(ny + 1)
    half_dy[1:-1] = 0.5 * dy
    horizontal = rows[:-1] * half_dy[:-1, None] + rows[1:] * half_dy[1:, None]

    cols = np.zeros((ny - 1, nx + 1))
    cols[:, 1:-1] = cell_values
    half_dx = np.zeros(nx + 1)
    half_dx[1:-1] = 0.5 * dx
    vertical = cols[:, :-1] * half_dx[None, :-1] + cols[:, 1:] * half_dx[None, 1:]
    return np.concatenate([horizontal.ravel(), vertical.ravel()])


class DeviceDiscretization:
    """Node, edge and boundary data of one mesh plus the residual assembly."""

    def __init__(self, mesh: Mesh2D, materials: MaterialsDAO, physics: PhysicsConfig):
        self.mesh = mesh
        self.physics = physics
        self.temperature = physics.lattice_temperature
        self.vt = constants.k * self.temperature / constants.e
        ny, nx = mesh.ny, mesh.nx
        self.size = ny * nx
        self.width_cm = mesh.width * 0.1

        self.x = mesh.x * UM_TO_CM
        self.y = mesh.y * UM_TO_CM
        dx, dy = np.diff(self.x), np.diff(self.y)

        region_params = {
            BARRIER: materials.alloy_params(mesh.region_alloy.get("barrier", 0.0)),
            CHANNEL: materials.alloy_params(mesh.region_alloy.get("channel", 0.0)),
        }
        cells = mesh.cell_region
        sc_cell = np.isin(cells, (BARRIER, CHANNEL)).astype(float)

        def cell_values(attribute: str) -> np.ndarray:
            values = np.zeros(cells.shape)
            for code, params in region_params.items():
                values[cells == code] = getattr(params, attribute)
            return values

        eps_cell = cell_values("eps_r")
        if np.any(cells == PASSIVATION):
            eps_cell[cells == PASSIVATION] = materials.dielectric_params(mesh.dielectric).k

        node_region = mesh.node_region.ravel()
        self.is_sc = np.isin(node_region, (BARRIER, CHANNEL))

        def node_values(attribute: str) -> np.ndarray:
            values = np.full(self.size, getattr(materials.gan, attribute), dtype=float)
            for code, params in region_params.items():
                values[node_region == code] = getattr(params, attribute)
            return values

        self.chi = node_values("chi")
        self.eg = node_values("eg")
        self.nc = effective_dos(node_values("me"), self.temperature)
        self.nv = effective_dos(node_values("mh"), self.temperature)
        self.ni = np.sqrt(self.nc * self.nv) * np.exp(-self.eg / (2.0 * self.vt))
        self.tau_n = node_values("tau_n")
        self.tau_p = node_values("tau_p")
        self.c_n = node_values("c_n")
        self.c_p = node_values("c_p")
        self.doping = np.where(self.is_sc, mesh.doping.ravel(), 0.0)
        self.log_nc = np.log(self.nc)
        self.log_nv = np.log(self.nv)

        quarter = 0.25 * np.outer(dy, dx) * sc_cell
        area = np.zeros((ny, nx))
        area[:-1, :-1] += quarter
        area[:-1, 1:] += quarter
        area[1:, :-1] += quarter
        area[1:, 1:] += quarter
        self.area = area.ravel()
        self.sheet = self._sheet_charges(mesh, materials, dx).ravel()

        index = np.arange(self.size).reshape(ny, nx)
        tails = np.concatenate([index[:, :-1].ravel(), index[:-1, :].ravel()])
        heads = np.concatenate([index[:, 1:].ravel(), index[1:, :].ravel()])
        lengths = np.concatenate([np.tile(dx, ny), np.repeat(dy, nx)])

        eps_w = _edge_sums(eps_cell, dx, dy)
        keep = eps_w > 0
        self.p_tail, self.p_head = tails[keep], heads[keep]
        self.p_coupling = eps_w[keep] / lengths[keep]

        w_sc = _edge_sums(sc_cell, dx, dy)
        keep = w_sc > 0
        self.t_tail, self.t_head = tails[keep], heads[keep]
        self.t_h = lengths[keep]
        self.t_w = w_sc[keep]
        self.t_volume = 0.5 * self.t_h * self.t_w

        def edge_mean(attribute: str) -> np.ndarray:
            return _edge_sums(sc_cell * cell_values(attribute), dx, dy)[keep] / self.t_w

        self.t_mu_n = edge_mean("mu0_n")
        self.t_mu_p = edge_mean("mu0_p")
        self.t_vsat = edge_mean("v_sat")
        self.t_a_n = edge_mean("a_n")
        self.t_b_n = edge_mean("b_n")
        self.t_a_p = edge_mean("a_p")
        self.t_b_p = edge_mean("b_p")

        self.terminal = mesh.terminal.ravel()
        self.fixed_psi = self.terminal != NO_TERMINAL
        self.fixed_phi = ~self.is_sc | self.fixed_psi
        self.free_sc = self.is_sc & ~self.fixed_psi
        self.fixed = np.concatenate([self.fixed_psi, self.fixed_phi, self.fixed_phi])
        self.contacts = {
            name: np.flatnonzero(self.is_sc & (self.terminal == code))
            for name, code in TERMINAL_CODES.items()
        }

        if np.any(self.terminal == GATE) and mesh.work_function is None:
            raise ValueError("Mesh has gate nodes but no gate work function")

        self.ohmic_reference = np.arange(self.size)
        if mesh.surface_row is not None:
            columns = np.arange(self.size) % nx
            metal = self.fixed_psi & ~self.is_sc
            self.ohmic_reference[metal] = mesh.surface_row * nx + columns[metal]
        self.neutral_psi = self._neutral_potential()

        logger.debug(
            "Discretized %d nodes, %d Poisson edges, %d transport edges",
            self.size,
            len(self.p_tail),
            len(self.t_tail),
        )

    def _sheet_charges(self, mesh: Mesh2D, materials: MaterialsDAO, dx: np.ndarray) -> np.ndarray:
        """Interface charge per unit depth (cm^-1, in units of q) on each node."""
        sheet = np.zeros((mesh.ny, mesh.nx))

        def half_lengths(mask: np.ndarray) -> np.ndarray:
            lengths = np.zeros(mesh.nx)
            lengths[:-1] += 0.5 * dx * mask
            lengths[1:] += 0.5 * dx * mask
            return lengths

        if mesh.heterointerface_row is not None:
            sigma = materials.polarization_sheet_charge(
                mesh.region_alloy["barrier"], mesh.relaxation
            )
            sheet[mesh.heterointerface_row] += sigma / Q * half_lengths(np.ones(mesh.nx - 1))
        if mesh.surface_row is not None and mesh.trap_density > 0 and mesh.surface_row > 0:
            exposed = mesh.cell_region[mesh.surface_row - 1] == PASSIVATION
            sheet[mesh.surface_row] -= mesh.trap_density * half_lengths(exposed)
        return sheet

    def _neutral_potential(self) -> np.ndarray:
        half = 0.5 * self.doping
        root = np.sqrt(half**2 + self.ni**2)
        n0 = np.where(half >= 0, half + root, self.ni**2 / (root - half))
        return self.vt * np.log(n0 / self.nc) - self.chi

    def boundary_values(self, biases: Dict[str, float]) -> Tuple[np.ndarray, np.ndarray]:
        """Dirichlet potential and quasi-Fermi values for every terminal node."""
        psi_fixed = np.zeros(self.size)
        phi_fixed = np.zeros(self.size)
        for name, code in TERMINAL_CODES.items():
            mask = self.terminal == code
            if not np.any(mask):
                continue
            voltage = biases.get(name, 0.0)
            if code == GATE:
                psi_fixed[mask] = voltage - self.mesh.work_function
            else:
                psi_fixed[mask] = voltage + self.neutral_psi[self.ohmic_reference[mask]]
            phi_fixed[mask] = voltage
        return psi_fixed, phi_fixed

    def densities(
        self, psi: np.ndarray, phi_n: np.ndarray, phi_p: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        vt = self.vt
        n = self.nc * np.exp(np.clip((psi + self.chi - phi_n) / vt, -EXP_LIMIT, EXP_LIMIT))
        p = self.nv * np.exp(
            np.clip((phi_p - psi - self.chi - self.eg) / vt, -EXP_LIMIT, EXP_LIMIT)
        )
        return n, p

    def _mobility(self, mu0: np.ndarray, field: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if not self.physics.high_field_mobility:
            return mu0, np.zeros_like(mu0)
        beta = self.physics.beta
        return (
            highfield_mobility(mu0, field, self.t_vsat, beta),
            highfield_mobility_derivative(mu0, field, self.t_vsat, beta),
        )

    def fluxes(
        self,
        psi: np.ndarray,
        phi_n: np.ndarray,
        phi_p: np.ndarray,
        n: np.ndarray,
        p: np.ndarray,
        derivatives: bool = False,
    ) -> EdgeFluxes:
        """Edge current densities, fields and impact generation."""
        k, l, h, vt = self.t_tail, self.t_head, self.t_h, self.vt
        dpsi = psi[l] - psi[k]
        field = np.abs(dpsi) / h
        sign = np.sign(dpsi)

        mu_n, dmu_n = self._mobility(self.t_mu_n, field)
        mu_p, dmu_p = self._mobility(self.t_mu_p, field)
        c_n = Q * mu_n * vt / h
        c_p = Q * mu_p * vt / h
        # d c / d psi_l; the tail derivative is the negative
        dc_n = Q * vt / h * dmu_n * sign / h
        dc_p = Q * vt / h * dmu_p * sign / h

        a_n = psi + self.chi + vt * self.log_nc
        g_n, gn_ak, gn_al, gn_pk, gn_pl = sg_edge_flux(
            n[k], n[l], (a_n[l] - a_n[k]) / vt, phi_n[l] - phi_n[k], vt
        )
        a_p = -(psi + self.chi + self.eg) + vt * self.log_nv
        g_p, gp_ak, gp_al, gp_pk, gp_pl = sg_edge_flux(
            p[k], p[l], (a_p[l] - a_p[k]) / vt, -(phi_p[l] - phi_p[k]), vt
        )
        jn = c_n * g_n
        jp = -c_p * g_p

        if self.physics.impact_ionization:
            alpha_n, dalpha_n = chynoweth_alpha(field, self.t_a_n, self.t_b_n)
            alpha_p, dalpha_p = chynoweth_alpha(field, self.t_a_p, self.t_b_p)
            generation = (alpha_n * np.abs(jn) + alpha_p * np.abs(jp)) / Q
        else:
            generation = np.zeros_like(jn)

        result = EdgeFluxes(jn=jn, jp=jp, field=field, generation=generation, mobility_n=mu_n)
        if not derivatives:
            return result

        zero = np.zeros_like(jn)
        djn = {
            "psi_k": c_n * gn_ak - g_n * dc_n,
            "psi_l": c_n * gn_al + g_n * dc_n,
            "phin_k": c_n * gn_pk,
            "phin_l": c_n * gn_pl,
            "phip_k": zero,
            "phip_l": zero,
        }
        djp = {
            "psi_k": c_p * gp_ak + g_p * dc_p,
            "psi_l": c_p * gp_al - g_p * dc_p,
            "phin_k": zero,
            "phin_l": zero,
            "phip_k": c_p * gp_pk,
            "phip_l": c_p * gp_pl,
        }
        dgen = {}
        if self.physics.impact_ionization:
            sign_n, sign_p = np.sign(jn), np.sign(jp)
            dfield = (np.abs(jn) * dalpha_n + np.abs(jp) * dalpha_p) / Q * sign / h
            for var in djn:
                dgen[var] = (alpha_n * sign_n * djn[var] + alpha_p * sign_p * djp[var]) / Q
            dgen["psi_k"] = dgen["psi_k"] - dfield
            dgen["psi_l"] = dgen["psi_l"] + dfield
        else:
            dgen = {var: zero for var in djn}
        result.derivatives = {"jn": djn, "jp": djp, "gen": dgen}
        return result

    def recombination(
        self, n: np.ndarray, p: np.ndarray, phi_n: np.ndarray, phi_p: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Net recombination and its derivatives in psi, phi_n and phi_p."""
        vt, ni2 = self.vt, self.ni**2
        argument = np.clip((phi_p - phi_n) / vt, -EXP_LIMIT, EXP_LIMIT)
        excess = ni2 * np.expm1(argument)
        product = ni2 * np.exp(argument)
        du_dphin, du_dphip = -product / vt, product / vt

        rate = np.zeros(self.size)
        d_psi = np.zeros(self.size)
        d_phin = np.zeros(self.size)
        d_phip = np.zeros(self.size)
        if self.physics.srh:
            denominator = np.maximum(
                self.tau_p * (n + self.ni) + self.tau_n * (p + self.ni), DENOMINATOR_FLOOR
            )
            dd_psi = (self.tau_p * n - self.tau_n * p) / vt
            dd_phin = -self.tau_p * n / vt
            dd_phip = self.tau_n * p / vt
            rate += excess / denominator
            d_psi += -excess * dd_psi / denominator**2
            d_phin += du_dphin / denominator - excess * dd_phin / denominator**2
            d_phip += du_dphip / denominator - excess * dd_phip / denominator**2
        if self.physics.auger:
            s = self.c_n * n + self.c_p * p
            rate += s * excess
            d_psi += (self.c_n * n - self.c_p * p) / vt * excess
            d_phin += -self.c_n * n / vt * excess + s * du_dphin
            d_phip += self.c_p * p / vt * excess + s * du_dphip
        return rate, d_psi, d_phin, d_phip

    def poisson_system(
        self,
        psi: np.ndarray,
        phi_n: np.ndarray,
        phi_p: np.ndarray,
        psi_fixed: np.ndarray,
    ) -> Tuple[np.ndarray, sp.csc_matrix]:
        """Poisson residual and Jacobian in psi alone, quasi-Fermi levels frozen."""
        size = self.size
        n, p = self.densities(psi, phi_n, phi_p)
        residual = self._poisson_residual(psi, n, p)
        k, l, c = self.p_tail, self.p_head, self.p_coupling
        rows = np.concatenate([k, k, l, l, np.arange(size)])
        cols = np.concatenate([k, l, l, k, np.arange(size)])
        charge = -Q_OVER_EPS0 * self.area * (n + p) / self.vt
        vals = np.concatenate([-c, c, -c, c, charge])
        return self._apply_dirichlet(
            residual, rows, cols, vals, psi - psi_fixed, self.fixed_psi, size
        )

    def _poisson_residual(self, psi: np.ndarray, n: np.ndarray, p: np.ndarray) -> np.ndarray:
        size = self.size
        k, l = self.p_tail, self.p_head
        flux = self.p_coupling * (psi[l] - psi[k])
        residual = np.bincount(k, flux, size) - np.bincount(l, flux, size)
        residual += Q_OVER_EPS0 * (self.area * (p - n + self.doping) + self.sheet)
        return residual

    def system(
        self,
        psi: np.ndarray,
        phi_n: np.ndarray,
        phi_p: np.ndarray,
        psi_fixed: np.ndarray,
        phi_fixed: np.ndarray,
        jacobian: bool = True,
    ) -> Tuple[np.ndarray, Optional[sp.csc_matrix]]:
        """Coupled residual (and Jacobian) over [psi; phi_n; phi_p]."""
        size, vt = self.size, self.vt
        n, p = self.densities(psi, phi_n, phi_p)
        fl = self.fluxes(psi, phi_n, phi_p, n, p, derivatives=jacobian)
        rate, dr_psi, dr_phin, dr_phip = self.recombination(n, p, phi_n, phi_p)

        k, l = self.t_tail, self.t_head
        scale = self.t_w / Q
        generation = np.bincount(k, fl.generation * self.t_volume, size) + np.bincount(
            l, fl.generation * self.t_volume, size
        )
        volume_rate = self.area * rate - generation
        f_n = np.bincount(k, fl.jn * scale, size) - np.bincount(l, fl.jn * scale, size)
        f_n -= volume_rate
        f_p = np.bincount(l, fl.jp * scale, size) - np.bincount(k, fl.jp * scale, size)
        f_p -= volume_rate
        residual = np.concatenate([self._poisson_residual(psi, n, p), f_n, f_p])

        current = np.concatenate([psi - psi_fixed, phi_n - phi_fixed, phi_p - phi_fixed])
        if not jacobian:
            residual[self.fixed] = current[self.fixed]
            return residual, None

        index = np.arange(size)
        rows, cols, vals = [], [], []

        pk, pl, c = self.p_tail, self.p_head, self.p_coupling
        rows += [pk, pk, pl, pl]
        cols += [pk, pl, pl, pk]
        vals += [-c, c, -c, c]
        charge = Q_OVER_EPS0 * self.area / vt
        rows += [index, index, index]
        cols += [index, size + index, 2 * size + index]
        vals += [-charge * (n + p), charge * n, charge * p]

        columns = {
            "psi_k": k,
            "psi_l": l,
            "phin_k": size + k,
            "phin_l": size + l,
            "phip_k": 2 * size + k,
            "phip_l": 2 * size + l,
        }
        djn, djp, dgen = fl.derivatives["jn"], fl.derivatives["jp"], fl.derivatives["gen"]
        for var, col in columns.items():
            source = dgen[var] * self.t_volume
            rows += [size + k, size + l, 2 * size + k, 2 * size + l]
            cols += [col, col, col, col]
            vals += [
                scale * djn[var] + source,
                -scale * djn[var] + source,
                -scale * djp[var] + source,
                scale * djp[var] + source,
            ]

        for offset in (size, 2 * size):
            rows += [offset + index, offset + index, offset + index]
            cols += [index, size + index, 2 * size + index]
            vals += [-self.area * dr_psi, -self.area * dr_phin, -self.area * dr_phip]

        return self._apply_dirichlet(
            residual,
            np.concatenate(rows),
            np.concatenate(cols),
            np.concatenate(vals),
            current,
            self.fixed,
            3 * size,
        )

    @staticmethod
    def _apply_dirichlet(
        residual: np.ndarray,
        rows: np.ndarray,
        cols: np.ndarray,
        vals: np.ndarray,
        current: np.ndarray,
        fixed: np.ndarray,
        size: int,
    ) -> Tuple[np.ndarray, sp.csc_matrix]:
        keep = ~fixed[rows]
        pinned = np.flatnonzero(fixed)
        rows = np.concatenate([rows[keep], pinned])
        cols = np.concatenate([cols[keep], pinned])
        vals = np.concatenate([vals[keep], np.ones(len(pinned))])
        residual = residual.copy()
        residual[fixed] = current[fixed]
        matrix = sp.csc_matrix((vals, (rows, cols)), shape=(size, size))
        return residual, matrix

    def continuity_system(
        self,
        carrier: str,
        psi: np.ndarray,
        other_density: np.ndarray,
        lifetime_factor: np.ndarray,
        generation: np.ndarray,
        fixed_density: np.ndarray,
    ) -> Tuple[sp.csc_matrix, np.ndarray]:
        """Linear continuity system in one carrier density, the other frozen.

        Recombination is linearized as K (n p - n_i^2) with ``lifetime_factor``
        holding K from the previous iterate.

        Args:
            carrier: "n" or "p"
            psi: Electrostatic potential
            other_density: The frozen opposite carrier density
            lifetime_factor: K per node in cm^3/s
            generation: Node generation in cm^-1 s^-1 (per unit depth)
            fixed_density: Density on the contact nodes

        Returns:
            (matrix, right-hand side) for the density vector.
        """
        size, vt = self.size, self.vt
        k, l, h = self.t_tail, self.t_head, self.t_h
        field = np.abs(psi[l] - psi[k]) / h
        if carrier == "n":
            mu, _ = self._mobility(self.t_mu_n, field)
            a = psi + self.chi + vt * self.log_nc
        else:
            mu, _ = self._mobility(self.t_mu_p, field)
            a = -(psi + self.chi + self.eg) + vt * self.log_nv
        delta = (a[l] - a[k]) / vt
        coefficient = Q * mu * vt / h * self.t_w / Q
        forward = coefficient * bernoulli(delta)
        backward = coefficient * bernoulli(-delta)

        index = np.arange(size)
        rows = np.concatenate([k, k, l, l, index])
        cols = np.concatenate([l, k, l, k, index])
        vals = np.concatenate(
            [forward, -backward, -forward, backward, -self.area * lifetime_factor * other_density]
        )
        rhs = -(self.area * lifetime_factor * self.ni**2 + generation)

        fixed = ~self.free_sc
        keep = ~fixed[rows]
        pinned = np.flatnonzero(fixed)
        matrix = sp.csc_matrix(
            (
                np.concatenate([vals[keep], np.ones(len(pinned))]),
                (np.concatenate([rows[keep], pinned]), np.concatenate([cols[keep], pinned])),
            ),
            shape=(size, size),
        )
        rhs = np.where(fixed, np.where(self.is_sc, fixed_density, 1.0), rhs)
        return matrix, rhs

    def lifetime_factor(self, n: np.ndarray, p: np.ndarray) -> np.ndarray:
        """K such that the enabled recombination terms equal K (n p - n_i^2)."""
        factor = np.zeros(self.size)
        if self.physics.srh:
            factor += 1.0 / np.maximum(
                self.tau_p * (n + self.ni) + self.tau_n * (p + self.ni), DENOMINATOR_FLOOR
            )
        if self.physics.auger:
            factor += self.c_n * n + self.c_p * p
        return factor

    def node_generation(self, fl: EdgeFluxes) -> np.ndarray:
        size = self.size
        share = fl.generation * self.t_volume
        return np.bincount(self.t_tail, share, size) + np.bincount(self.t_head, share, size)

    def terminal_currents(self, fl: EdgeFluxes) -> Dict[str, float]:
        """Current flowing into the device through each terminal, in mA."""
        k, l = self.t_tail, self.t_head
        total = (fl.jn + fl.jp) * self.t_w
        currents: Dict[str, float] = {}
        for name, nodes in self.contacts.items():
            contact = np.zeros(self.size, dtype=bool)
            contact[nodes] = True
            outward = contact[k] & self.free_sc[l]
            inward = contact[l] & self.free_sc[k]
            amps_per_cm = total[outward].sum() - total[inward].sum()
            currents[name] = float(amps_per_cm * self.width_cm * 1e3)
        return currents

    def node_field(self, psi: np.ndarray) -> np.ndarray:
        """Field magnitude per node in MV/cm."""
        grid = psi.reshape(self.mesh.ny, self.mesh.nx)
        gy, gx = np.gradient(grid, self.y, self.x)
        return np.hypot(gx, gy).ravel() * 1e-6
