from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

# Terminal currents below this floor (mA) are compared against it instead of I_d
CURRENT_FLOOR_MA = 1e-3


class SimulationError(Exception):
    """Base exception for simulation operations."""

    pass


class MaterialsError(SimulationError):
    """Raised for out-of-range compositions, unknown materials or bad parameter files."""

    pass


class SpecValidationError(SimulationError):
    """Aggregated device-specification violations."""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class ConfigError(SimulationError):
    """Aggregated configuration parse errors, each prefixed with its line number."""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


class ConvergenceError(SimulationError):
    """A nonlinear solve did not reach its tolerance."""

    def __init__(
        self,
        message: str,
        history: Optional[List[float]] = None,
        bias: Optional[Dict[str, float]] = None,
    ):
        self.history = list(history or [])
        self.bias = dict(bias or {})
        super().__init__(message)


class SchrodingerError(SimulationError):
    """The effective-mass eigenproblem failed."""

    def __init__(self, message: str, residuals: Optional[List[float]] = None):
        self.residuals = list(residuals or [])
        super().__init__(message)


class SingularNetworkError(SimulationError):
    """A two-port conversion or AC linear system is singular."""

    def __init__(self, message: str, frequency: Optional[float] = None):
        self.frequency = frequency
        super().__init__(message)


@dataclass(frozen=True)
class MaterialParams:
    """Position-independent semiconductor constants.

    Units: eg, chi in eV; me, mh in m0; mu0_n, mu0_p in cm^2/Vs; v_sat in cm/s;
    tau_n, tau_p in s; c_n, c_p in cm^6/s; psp, e31, e33 in C/m^2; c13, c33 in
    GPa; a in Angstrom; a_n, a_p in 1/cm; b_n, b_p in V/cm.
    """

    eg: float
    chi: float
    eps_r: float
    me: float
    mh: float
    mu0_n: float
    mu0_p: float
    v_sat: float
    tau_n: float
    tau_p: float
    c_n: float
    c_p: float
    psp: float
    e31: float
    e33: float
    c13: float
    c33: float
    a: float
    a_n: float
    b_n: float
    a_p: float
    b_p: float


@dataclass(frozen=True)
class DielectricParams:
    name: str
    k: float
    e_crit: float  # MV/cm


@dataclass(frozen=True)
class Layer:
    name: str
    params: MaterialParams
    thickness: float  # nm
    doping: float  # cm^-3, N_D - N_A


@dataclass(frozen=True)
class LayerStack1D:
    """Vertical cut through a heterostructure, listed from the surface down.

    ``sheet_charges[i]`` (C/cm^2) sits on the junction between layer i and i+1.
    The top boundary is a Schottky contact when ``work_function`` is set,
    otherwise the surface is pinned ``surface_barrier`` eV below the
    conduction band edge.
    """

    layers: Tuple[Layer, ...]
    sheet_charges: Tuple[float, ...]
    work_function: Optional[float] = None
    surface_barrier: Optional[float] = None
    temperature: float = 300.0

    @property
    def interfaces(self) -> List[float]:
        """Depth (nm) of every heterojunction."""
        return list(np.cumsum([layer.thickness for layer in self.layers])[:-1])

    @property
    def total_thickness(self) -> float:
        return float(sum(layer.thickness for layer in self.layers))


@dataclass
class BandDiagram1D:
    z: np.ndarray  # nm
    ec: np.ndarray  # eV
    ev: np.ndarray  # eV
    n: np.ndarray  # cm^-3
    p: np.ndarray  # cm^-3
    field: np.ndarray  # MV/cm
    psi: np.ndarray  # V
    energies: np.ndarray  # eV, relative to the Fermi level
    wavefunctions: np.ndarray  # (n_states, len(z)), nm^-1/2
    gate_bias: float
    channel_bounds: Tuple[float, float]  # nm
    quantum_window: Tuple[float, float]  # nm
    gate_charge: float  # cm^-2, in units of q
    iterations: int
    fermi_level: float = 0.0
    charge_imbalance: float = 0.0  # |total charge| relative to the largest charge term


@dataclass
class ConvergenceReport:
    converged: bool
    gummel_iterations: int = 0
    newton_iterations: int = 0
    history: List[float] = field(default_factory=list)


@dataclass
class SolutionState:
    """One converged bias point on a 2D mesh. Currents are in mA for the full width."""

    psi: np.ndarray
    phi_n: np.ndarray
    phi_p: np.ndarray
    n: np.ndarray
    p: np.ndarray
    currents: Dict[str, float]
    field: np.ndarray  # MV/cm, per node
    biases: Dict[str, float]
    report: ConvergenceReport
    electron_temperature: Optional[np.ndarray] = None

    @property
    def drain_current(self) -> float:
        return self.currents.get("drain", 0.0)

    @property
    def kirchhoff_error(self) -> float:
        """Relative terminal-current imbalance."""
        total = sum(self.currents.values())
        scale = max(abs(self.drain_current), CURRENT_FLOOR_MA)
        return abs(total) / scale


@dataclass
class IVCurve:
    swept: str
    values: np.ndarray  # V
    currents: np.ndarray  # drain current, mA
    fixed_biases: Dict[str, float]
    converged: np.ndarray
    failures: List[Tuple[float, str]] = field(default_factory=list)
    kirchhoff: Optional[np.ndarray] = None


@dataclass
class DCMetrics:
    v_th: Optional[float]  # V
    ss: Optional[float]  # mV/dec
    gm_peak: Optional[float]  # mS
    i_peak: Optional[float]  # mA
    unavailable: Dict[str, str] = field(default_factory=dict)


@dataclass
class BreakdownResult:
    dielectric: str
    field_plate_length: float  # um
    v_br: Optional[float]  # V
    criterion: str
    trace: List[Tuple[float, float]]  # (V_ds, I_d mA/mm)
    exceeded: bool = False
    lower_bound: bool = False
    gate_edge_field: Optional[float] = None  # MV/cm at the probe bias
    peak_channel_field: Optional[float] = None  # MV/cm at the probe bias
    channel_profile: List[Tuple[float, float]] = field(default_factory=list)  # (x um, MV/cm)


@dataclass
class FigureOfMerit:
    value: Optional[float]  # Hz
    extrapolated: bool
    on_grid: Optional[float] = None
    extrapolated_value: Optional[float] = None
    reason: str = ""


@dataclass
class TwoPortSpectrum:
    frequencies: np.ndarray  # Hz
    y: np.ndarray  # (nf, 2, 2) complex, S
    s: np.ndarray  # (nf, 2, 2) complex
    h21_db: np.ndarray
    u_db: np.ndarray
    k: np.ndarray
    gma_db: np.ndarray
    gms_db: np.ndarray
    f_t: FigureOfMerit
    f_max: FigureOfMerit
    z0: float = 50.0
    operating_point: Dict[str, float] = field(default_factory=dict)
    stability_frequency: Optional[float] = None


@dataclass
class RunReport:
    command: str
    version: str
    config_echo: str
    metrics: Dict[str, object]
    files: List[str]
    timestamp: str = ""
    wall_clock: float = 0.0
    iterations: Dict[str, int] = field(default_factory=dict)
    exit_code: int = 0


@dataclass(frozen=True)
class PlotSeries:
    data_file: str
    x_column: int  # 1-based, gnuplot style
    y_column: int
    title: str


@dataclass
class PlotSpec:
    name: str
    title: str
    x_label: str
    y_label: str
    series: List[PlotSeries]
    log_x: bool = False
    log_y: bool = False
