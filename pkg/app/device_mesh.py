import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid

from app.data_types import SimulationError, SpecValidationError
from app.materials_dao import MaterialsDAO
from app.models import DeviceSpec

logger = logging.getLogger(__name__)

REGIONS = ("barrier", "channel", "passivation", "contact")
TERMINALS = ("none", "source", "drain", "gate")
SEMICONDUCTOR_REGIONS = ("barrier", "channel")

BARRIER, CHANNEL, PASSIVATION, CONTACT = range(4)
NO_TERMINAL, SOURCE, DRAIN, GATE = range(4)

# (max spacing x, max spacing y, growth) in um and um/um
REFINEMENT_LEVELS = {
    "coarse": (0.4, 0.08, 0.5),
    "normal": (0.25, 0.05, 0.35),
}

# Heterointerface: <= 1 nm within 10 nm; gate and field-plate edges: <= 10 nm within 50 nm
INTERFACE_SPACING, INTERFACE_ZONE = 1e-3, 10e-3
EDGE_SPACING, EDGE_ZONE = 10e-3, 50e-3


@dataclass(frozen=True, eq=False)
class Mesh2D:
    """Rectilinear mesh of the device cross-section.

    x runs from source to drain and y points into the wafer; y = 0 is the
    barrier surface and the passivation occupies y < 0. Node arrays have shape
    (ny, nx) and cell arrays (ny - 1, nx - 1). Lengths are in um.
    """

    x: np.ndarray
    y: np.ndarray
    cell_region: np.ndarray
    node_region: np.ndarray
    doping: np.ndarray
    terminal: np.ndarray
    region_alloy: Dict[str, float]
    dielectric: Optional[str] = None
    relaxation: float = 0.0
    trap_density: float = 0.0
    width: float = 1.0
    heterointerface_row: Optional[int] = None
    surface_row: Optional[int] = None
    gate_edge: Optional[float] = None
    field_plate_edge: Optional[float] = None
    work_function: Optional[float] = None  # eV, gate metal
    refinement: str = "normal"
    metadata: Dict[str, float] = field(default_factory=dict)

    @property
    def nx(self) -> int:
        return len(self.x)

    @property
    def ny(self) -> int:
        return len(self.y)

    @property
    def num_nodes(self) -> int:
        return self.nx * self.ny

    @property
    def is_semiconductor_cell(self) -> np.ndarray:
        return np.isin(self.cell_region, (BARRIER, CHANNEL))

    @property
    def is_semiconductor_node(self) -> np.ndarray:
        return np.isin(self.node_region, (BARRIER, CHANNEL))

    def cell_areas(self) -> np.ndarray:
        """Cell areas (um^2); metal cells count as zero."""
        areas = np.outer(np.diff(self.y), np.diff(self.x))
        return np.where(self.cell_region == CONTACT, 0.0, areas)

    def terminal_nodes(self, name: str) -> np.ndarray:
        """Flat indices of the nodes tied to a terminal."""
        return np.flatnonzero(self.terminal.ravel() == TERMINALS.index(name))

    def node_coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        xx, yy = np.meshgrid(self.x, self.y)
        return xx.ravel(), yy.ravel()


def validate_spec(spec: DeviceSpec, materials: Optional[MaterialsDAO] = None) -> DeviceSpec:
    """Check every device invariant and report all violations together.

    Args:
        spec: Device description
        materials: When given, the passivation name is checked against it

    Returns:
        The unchanged spec.

    Raises:
        SpecValidationError: Listing every violated invariant
    """
    errors: List[str] = []
    geometry = {
        "gate_length": spec.gate_length,
        "field_plate_length": spec.field_plate_length,
        "gate_drain_spacing": spec.gate_drain_spacing,
        "passivation_thickness": spec.passivation_thickness,
        "barrier_thickness": spec.barrier_thickness,
        "channel_thickness": spec.channel_thickness,
    }
    for name, value in geometry.items():
        if value is None:
            errors.append(f"{name} is required (no geometry given)")

    positive = {
        "gate_length": spec.gate_length,
        "gate_drain_spacing": spec.gate_drain_spacing,
        "gate_source_spacing": spec.gate_source_spacing,
        "contact_length": spec.contact_length,
        "gate_height": spec.gate_height,
        "passivation_thickness": spec.passivation_thickness,
        "barrier_thickness": spec.barrier_thickness,
        "channel_thickness": spec.channel_thickness,
        "implant_length": spec.implant_length,
        "width": spec.width,
        "work_function": spec.work_function,
    }
    for name, value in positive.items():
        if value is not None and value <= 0:
            errors.append(f"{name} must be > 0, got {value}")

    for name in ("implant_peak", "barrier_doping", "channel_doping"):
        value = getattr(spec, name)
        if value <= 0:
            errors.append(f"{name} must be > 0, got {value}")

    if spec.field_plate_length is not None:
        if spec.field_plate_length < 0:
            errors.append(f"field_plate_length must be >= 0, got {spec.field_plate_length}")
        if spec.gate_drain_spacing is not None and spec.field_plate_length > spec.gate_drain_spacing:
            errors.append(
                f"field plate exceeds gate-drain gap "
                f"({spec.field_plate_length} um > {spec.gate_drain_spacing} um)"
            )
    if not 0.0 <= spec.al_fraction <= 1.0:
        errors.append(f"al_fraction must lie in [0, 1], got {spec.al_fraction}")
    if not 0.0 <= spec.relaxation <= 1.0:
        errors.append(f"relaxation must lie in [0, 1], got {spec.relaxation}")
    if spec.trap_density < 0:
        errors.append(f"trap_density must be >= 0, got {spec.trap_density}")
    if materials is not None and spec.passivation not in materials.supported_dielectrics:
        errors.append(
            f"unknown passivation '{spec.passivation}'; "
            f"supported: {', '.join(materials.supported_dielectrics)}"
        )

    if errors:
        raise SpecValidationError(errors)
    return spec


def net_doping(spec: DeviceSpec, point: Tuple[float, float]) -> float:
    """Net donor density N_D - N_A (cm^-3) at a point of the semiconductor.

    Args:
        spec: Validated device description
        point: (x, y) in um

    Raises:
        SpecValidationError: If the point is not inside the barrier or channel
    """
    x, y = point
    if y < 0 or y > spec.surface_to_bottom or x < 0 or x > spec.total_length:
        raise SpecValidationError([f"point ({x}, {y}) um lies outside the semiconductor"])
    region = BARRIER if y < spec.barrier_thickness * 1e-3 else CHANNEL
    value = _doping_profile(spec, np.array([x]), np.array([y]), np.array([region]))
    return float(value[0])


def _doping_profile(
    spec: DeviceSpec, x: np.ndarray, y: np.ndarray, region: np.ndarray
) -> np.ndarray:
    background = np.where(region == BARRIER, spec.barrier_doping, spec.channel_doping)
    implant = np.zeros_like(x, dtype=float)
    for left, right in _contact_windows(spec):
        dx = np.maximum(0.0, np.maximum(left - x, x - right))
        implant += spec.implant_peak * np.exp(
            -((dx / spec.implant_length) ** 2) - (y / spec.implant_length) ** 2
        )
    return background + implant


def _contact_windows(spec: DeviceSpec) -> List[Tuple[float, float]]:
    return [
        (0.0, spec.contact_length),
        (spec.total_length - spec.contact_length, spec.total_length),
    ]


def _graded_axis(
    lines: Sequence[float],
    targets: Sequence[Tuple[float, float, float]],
    h_max: float,
    growth: float,
) -> np.ndarray:
    """Place nodes so that spacing follows a graded size function.

    Args:
        lines: Sorted coordinates that must be grid lines
        targets: (position, fine spacing, window half-width) refinement requests
        h_max: Largest allowed spacing
        growth: Spacing increase per unit distance outside a window

    Returns:
        Strictly increasing coordinates containing every mandatory line.
    """

    def spacing(s: np.ndarray) -> np.ndarray:
        h = np.full_like(s, h_max)
        for position, h_fine, window in targets:
            distance = np.maximum(0.0, np.abs(s - position) - window)
            h = np.minimum(h, h_fine + growth * distance)
        return h

    coords = [lines[0]]
    for a, b in zip(lines[:-1], lines[1:]):
        s = np.linspace(a, b, 4001)
        cumulative = cumulative_trapezoid(1.0 / spacing(s), s, initial=0.0)
        count = max(1, int(np.ceil(cumulative[-1] - 1e-9)))
        marks = np.arange(1, count) * cumulative[-1] / count
        coords.extend(np.interp(marks, cumulative, s))
        coords.append(b)
    return np.asarray(coords, dtype=float)


def _axes(spec: DeviceSpec, refinement: str) -> Tuple[np.ndarray, np.ndarray]:
    h_max_x, h_max_y, growth = REFINEMENT_LEVELS["normal" if refinement == "fine" else refinement]
    t_pass = spec.passivation_thickness
    t_bar = spec.barrier_thickness * 1e-3
    lx = spec.total_length

    x_lines = {0.0, spec.contact_length, spec.gate_left, spec.gate_right,
               lx - spec.contact_length, lx}
    x_targets = [
        (spec.contact_length, 0.02, 0.05),
        (lx - spec.contact_length, 0.02, 0.05),
        (spec.gate_left, 0.9 * EDGE_SPACING, EDGE_ZONE + 0.02),
        (spec.gate_right, 0.9 * EDGE_SPACING, EDGE_ZONE + 0.02),
    ]
    if spec.field_plate_length:
        x_lines.add(spec.field_plate_end)
        x_targets.append((spec.field_plate_end, 0.9 * EDGE_SPACING, EDGE_ZONE + 0.02))

    y_lines = [-t_pass, 0.0, t_bar, spec.surface_to_bottom]
    y_targets = [
        (-t_pass, 0.01, 0.02),
        (0.0, 2e-3, 5e-3),
        (t_bar, 0.9 * INTERFACE_SPACING, INTERFACE_ZONE + 2e-3),
    ]

    x = _graded_axis(sorted(x_lines), x_targets, h_max_x, growth)
    y = _graded_axis(y_lines, y_targets, h_max_y, growth)
    if refinement == "fine":
        x = _bisect(x)
        y = _bisect(y)
    return x, y


def _bisect(coords: np.ndarray) -> np.ndarray:
    mids = 0.5 * (coords[:-1] + coords[1:])
    return np.sort(np.concatenate([coords, mids]))


def build_mesh(
    spec: DeviceSpec, refinement: str = "normal", materials: Optional[MaterialsDAO] = None
) -> Mesh2D:
    """Discretize a validated device.

    Args:
        spec: Device description
        refinement: coarse, normal or fine; fine bisects every normal interval
        materials: Optional database used to validate the passivation name

    Returns:
        A mesh satisfying the spacing, tagging and partition invariants.

    Raises:
        SpecValidationError: If the spec is invalid
        ValueError: If the refinement level is unknown
    """
    if refinement not in ("coarse", "normal", "fine"):
        raise ValueError(f"Unknown refinement '{refinement}'; use coarse, normal or fine")
    validate_spec(spec, materials)

    x, y = _axes(spec, refinement)
    t_bar = spec.barrier_thickness * 1e-3
    lx = spec.total_length

    xc = 0.5 * (x[:-1] + x[1:])
    yc = 0.5 * (y[:-1] + y[1:])
    cx, cy = np.meshgrid(xc, yc)
    metal = (cx < spec.contact_length) | (cx > lx - spec.contact_length) | (
        (cx > spec.gate_left) & (cx < spec.gate_right)
    )
    cell_region = np.where(
        cy < 0.0,
        np.where(metal, CONTACT, PASSIVATION),
        np.where(cy < t_bar, BARRIER, CHANNEL),
    ).astype(int)

    node_region = _node_regions(cell_region)
    xx, yy = np.meshgrid(x, y)
    semiconductor = np.isin(node_region, (BARRIER, CHANNEL))
    doping = np.where(semiconductor, _doping_profile(spec, xx, yy, node_region), 0.0)

    terminal = np.full(xx.shape, NO_TERMINAL, dtype=int)
    in_metal_band = yy <= 0.0
    terminal[in_metal_band & (xx <= spec.contact_length)] = SOURCE
    terminal[in_metal_band & (xx >= lx - spec.contact_length)] = DRAIN
    terminal[in_metal_band & (xx >= spec.gate_left) & (xx <= spec.gate_right)] = GATE
    if spec.field_plate_length:
        top = np.isclose(yy, -spec.passivation_thickness, rtol=0.0, atol=1e-12)
        terminal[top & (xx >= spec.gate_right) & (xx <= spec.field_plate_end)] = GATE

    for array in (x, y, cell_region, node_region, doping, terminal):
        array.setflags(write=False)

    mesh = Mesh2D(
        x=x,
        y=y,
        cell_region=cell_region,
        node_region=node_region,
        doping=doping,
        terminal=terminal,
        region_alloy={"barrier": spec.al_fraction, "channel": 0.0},
        dielectric=spec.passivation,
        relaxation=spec.relaxation,
        trap_density=spec.trap_density,
        width=spec.width,
        heterointerface_row=int(np.flatnonzero(np.isclose(y, t_bar, rtol=0.0, atol=1e-12))[0]),
        surface_row=int(np.flatnonzero(y == 0.0)[0]),
        gate_edge=spec.gate_right,
        work_function=spec.work_function,
        field_plate_edge=spec.field_plate_end if spec.field_plate_length else None,
        refinement=refinement,
        metadata={"gate_left": spec.gate_left, "barrier_bottom": t_bar},
    )

    violations = mesh_violations(mesh)
    if violations:
        raise SimulationError("Mesh invariants violated: " + "; ".join(violations))
    logger.info("Built %s mesh with %d x %d nodes", refinement, mesh.nx, mesh.ny)
    return mesh


def _node_regions(cell_region: np.ndarray) -> np.ndarray:
    """Assign each node the region of an adjacent cell.

    Semiconductor wins over dielectric and the cell below wins over the cell
    above, so heterointerface nodes belong to the channel.
    """
    ny, nx = cell_region.shape[0] + 1, cell_region.shape[1] + 1
    padded = np.full((ny + 1, nx + 1), -1, dtype=int)
    padded[1:-1, 1:-1] = cell_region
    # Adjacent cells of node (j, i): rows j-1, j and columns i-1, i
    below = [padded[1:, :-1], padded[1:, 1:]]
    above = [padded[:-1, :-1], padded[:-1, 1:]]

    region = np.full((ny, nx), CONTACT, dtype=int)
    for candidates in (above, below):
        for cells in candidates:
            region = np.where(cells == PASSIVATION, PASSIVATION, region)
    for candidates in (above, below):
        for cells in candidates:
            region = np.where(np.isin(cells, (BARRIER, CHANNEL)), cells, region)
    return region


def mesh_violations(mesh: Mesh2D) -> List[str]:
    """Return every broken mesh invariant; empty when the mesh is sound."""
    problems: List[str] = []
    if np.any(np.diff(mesh.x) <= 0) or np.any(np.diff(mesh.y) <= 0):
        problems.append("coordinates are not strictly increasing")
    if not np.all(np.isin(mesh.cell_region, range(len(REGIONS)))):
        problems.append("untagged cells")
    semiconductor = mesh.is_semiconductor_node
    if not np.all(np.isfinite(mesh.doping[semiconductor])):
        problems.append("non-finite doping on semiconductor nodes")

    if mesh.heterointerface_row is not None:
        y0 = mesh.y[mesh.heterointerface_row]
        if _max_spacing_near(mesh.y, y0, INTERFACE_ZONE) > INTERFACE_SPACING + 1e-12:
            problems.append("heterointerface spacing exceeds 1 nm")
    for edge in (mesh.gate_edge, mesh.metadata.get("gate_left"), mesh.field_plate_edge):
        if edge is not None and _max_spacing_near(mesh.x, edge, EDGE_ZONE) > EDGE_SPACING + 1e-12:
            problems.append(f"spacing near x = {edge} um exceeds 10 nm")
    return problems


def _max_spacing_near(coords: np.ndarray, position: float, zone: float) -> float:
    left, right = coords[:-1], coords[1:]
    touching = (right > position - zone) & (left < position + zone)
    if not np.any(touching):
        return np.inf
    return float(np.max((right - left)[touching]))


def build_resistor_mesh(
    length: float = 5.0,
    height: float = 0.5,
    doping: float = 1e17,
    nx: int = 51,
    ny: int = 6,
    width: float = 1.0,
) -> Mesh2D:
    """Uniform GaN bar with ohmic contacts on its left and right faces.

    Args:
        length: Bar length in um
        height: Bar thickness in um
        doping: Uniform donor density in cm^-3
        nx: Nodes along the bar
        ny: Nodes across the bar
        width: Device width in mm
    """
    x = np.linspace(0.0, length, nx)
    y = np.linspace(0.0, height, ny)
    cell_region = np.full((ny - 1, nx - 1), CHANNEL, dtype=int)
    node_region = np.full((ny, nx), CHANNEL, dtype=int)
    terminal = np.full((ny, nx), NO_TERMINAL, dtype=int)
    terminal[:, 0] = SOURCE
    terminal[:, -1] = DRAIN
    for array in (x, y, cell_region, node_region, terminal):
        array.setflags(write=False)
    return Mesh2D(
        x=x,
        y=y,
        cell_region=cell_region,
        node_region=node_region,
        doping=np.full((ny, nx), float(doping)),
        terminal=terminal,
        region_alloy={"channel": 0.0},
        width=width,
        refinement="uniform",
    )


def mesh_table(mesh: Mesh2D) -> pd.DataFrame:
    """Node dump with columns x (um), y (um), region, doping (cm^-3)."""
    xs, ys = mesh.node_coordinates()
    return pd.DataFrame(
        {
            "x": xs,
            "y": ys,
            "region": [REGIONS[code] for code in mesh.node_region.ravel()],
            "doping": mesh.doping.ravel(),
        }
    )
