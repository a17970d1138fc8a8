import numpy as np
import pytest
from scipy import constants
from scipy.integrate import trapezoid
from scipy.linalg import LinAlgError

from app.data_types import (
    ConvergenceError,
    Layer,
    LayerStack1D,
    SchrodingerError,
    SpecValidationError,
)
from app.materials_dao import effective_dos
from app.models import BandConfig
from app.sp_solver import (
    KINETIC,
    SchrodingerPoissonSolver,
    band_summary,
    gate_stack,
    sheet_density,
    solve_schrodinger,
    validate_stack,
)


def square_well_levels(width, mass, count):
    n = np.arange(1, count + 1)
    return n**2 * np.pi**2 * KINETIC / (mass * width**2)


@pytest.mark.parametrize("mass", [0.2, 0.4])
def test_square_well(mass):
    """Test the hard-wall levels against n^2 pi^2 hbar^2 / (2 m L^2)."""
    z = np.linspace(0.0, 10.0, 500)
    energies, wavefunctions = solve_schrodinger(z, np.zeros_like(z), mass, 3)

    np.testing.assert_allclose(energies, square_well_levels(10.0, mass, 3), rtol=5e-3)
    np.testing.assert_allclose(trapezoid(wavefunctions**2, z), 1.0, rtol=1e-9)
    assert wavefunctions.shape == (3, 500)
    assert np.all(wavefunctions[:, [0, -1]] == 0.0)


def test_square_well_mass_scaling():
    """Test that doubling the mass halves every level."""
    z = np.linspace(0.0, 10.0, 500)
    light, _ = solve_schrodinger(z, np.zeros_like(z), 0.2, 3)
    heavy, _ = solve_schrodinger(z, np.zeros_like(z), 0.4, 3)
    np.testing.assert_allclose(heavy, light / 2, rtol=5e-3)


def test_triangular_well():
    """Test the ground level of a constant-field well against the Airy zero."""
    mass, field = 0.2, 0.01  # V/nm
    z = np.linspace(0.0, 40.0, 1001)
    energies, _ = solve_schrodinger(z, field * z, mass, 1)

    expected = 2.338 * (KINETIC / mass) ** (1 / 3) * field ** (2 / 3)
    assert energies[0] == pytest.approx(expected, rel=1e-2)


TEST_CASES = [
    (np.linspace(0, 1, 20), 1, ValueError, "at least 50 nodes", "Grid too small"),
    (np.linspace(0, 1, 60), 0, ValueError, "n_states must be >= 1", "No states requested"),
]


@pytest.mark.parametrize(
    "z,n_states,error,message,description",
    TEST_CASES,
    ids=[case[4] for case in TEST_CASES],
)
def test_schrodinger_argument_errors(z, n_states, error, message, description):
    with pytest.raises(error, match=message):
        solve_schrodinger(z, np.zeros_like(z), 0.2, n_states)


def test_schrodinger_failed_eigensolve(mocker):
    """Test that a LAPACK failure surfaces as SchrodingerError."""
    mocker.patch("app.sp_solver.eigh_tridiagonal", side_effect=LinAlgError("no convergence"))
    z = np.linspace(0.0, 10.0, 100)
    with pytest.raises(SchrodingerError, match="Eigensolve failed"):
        solve_schrodinger(z, np.zeros_like(z), 0.2, 2)


def test_validate_stack_reports_all_problems(materials):
    stack = LayerStack1D(
        layers=(Layer("only", materials.gan, -1.0, 0.0),),
        sheet_charges=(0.0,),
        temperature=0.0,
    )
    with pytest.raises(SpecValidationError) as excinfo:
        validate_stack(stack)
    assert len(excinfo.value.errors) == 5


def test_gate_stack(materials, reference_spec):
    """Test the vertical cut under the gate of the reference device."""
    stack = gate_stack(reference_spec, materials)
    assert [layer.name for layer in stack.layers] == ["barrier", "channel"]
    assert stack.interfaces == [30.0]
    assert stack.sheet_charges[0] == pytest.approx(
        materials.polarization_sheet_charge(0.295, 0.7)
    )


@pytest.fixture
def neutral_stack(materials):
    """Undoped GaN on GaN with the metal at the intrinsic level."""
    gan = materials.gan
    vt = constants.k * 300.0 / constants.e
    nc, nv = effective_dos(gan.me, 300.0), effective_dos(gan.mh, 300.0)
    n_i = np.sqrt(nc * nv) * np.exp(-gan.eg / (2 * vt))
    return LayerStack1D(
        layers=(Layer("top", gan, 30.0, 0.0), Layer("bottom", gan, 180.0, 0.0)),
        sheet_charges=(0.0,),
        work_function=gan.chi - vt * np.log(n_i / nc),
    ), n_i


def test_no_polarization_no_charge(neutral_stack):
    """Test that a charge-free stack stays flat at the intrinsic level."""
    stack, n_i = neutral_stack
    bd = SchrodingerPoissonSolver().solve_sp(stack)

    classical = (bd.z < bd.quantum_window[0]) | (bd.z > bd.quantum_window[1])
    np.testing.assert_allclose(bd.n[classical], n_i, rtol=1e-6)
    assert np.max(np.abs(bd.field)) < 1e-6
    assert sheet_density(bd) < 1e9
    assert bd.charge_imbalance < 1e-4


def test_iteration_cap(materials, reference_spec):
    """Test that exceeding the outer iteration cap raises ConvergenceError."""
    solver = SchrodingerPoissonSolver(BandConfig(max_iterations=1, tolerance=1e-300))
    with pytest.raises(ConvergenceError, match="did not converge") as excinfo:
        solver.solve_sp(gate_stack(reference_spec, materials))
    assert excinfo.value.history


def test_ns_sweep_pinch_off(mocker, materials, reference_spec):
    """Test that the sweep keeps the input order and finds the pinch-off bias."""
    solver = SchrodingerPoissonSolver()
    densities = {-4.0: 1e8, -3.0: 5e9, -2.0: 2e12, -1.0: None, 0.0: 9e12}

    def fake_solve(stack, bias):
        if densities[bias] is None:
            raise ConvergenceError("stuck")
        return densities[bias]

    mocker.patch.object(solver, "solve_sp", side_effect=fake_solve)
    mocker.patch("app.sp_solver.sheet_density", side_effect=lambda value: value)

    table, pinch_off = solver.ns_sweep(
        gate_stack(reference_spec, materials), list(densities), workers=2
    )

    assert list(table["gate_bias"]) == list(densities)
    assert list(table["converged"]) == [True, True, True, False, True]
    assert np.isnan(table["n_s"].iloc[3])
    assert pinch_off == -3.0


def test_band_summary_keys(neutral_stack):
    stack, _ = neutral_stack
    summary = band_summary(SchrodingerPoissonSolver(BandConfig(subbands=2)).solve_sp(stack))
    assert {"gate_bias", "n_s", "peak_field", "peak_depth", "E1", "E2"} <= set(summary)
    assert "E3" not in summary
