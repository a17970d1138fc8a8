"""Full-device checks on the reference HEMT. Run with HETEROSIM_SLOW_TESTS=1."""

import numpy as np
import pytest

from app import breakdown_study, dc_analysis
from app.ac_analysis import ac_solve
from app.config import WORKERS
from app.dd_solver import DriftDiffusionSolver
from app.device_mesh import build_mesh
from app.models import BandConfig, DeviceSpec, PhysicsConfig, StudyGrid, TransferSweep
from app.sp_solver import SchrodingerPoissonSolver, band_summary, gate_stack, sheet_density

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def reference_solver(materials):
    mesh = build_mesh(DeviceSpec.reference(), "coarse", materials)
    return DriftDiffusionSolver(mesh, PhysicsConfig(), materials)


@pytest.fixture(scope="module")
def reference_equilibrium(reference_solver):
    return reference_solver.solve_equilibrium()


def test_band_diagram_under_the_gate(materials):
    """Test the 2DEG at zero gate bias against the expected magnitudes."""
    stack = gate_stack(DeviceSpec.reference(), materials)
    summary = band_summary(SchrodingerPoissonSolver(BandConfig()).solve_sp(stack, 0.0))

    assert 0.5e13 <= summary["n_s"] <= 2e13
    assert summary["peak_depth"] == pytest.approx(30.0, abs=3.0)
    assert 0.75 <= summary["peak_field"] <= 3.0
    assert summary["E1"] < summary["E2"] < summary["E3"]


def test_band_diagram_is_neutral(materials):
    """Test that gate, sheet, dopant and carrier charges cancel."""
    stack = gate_stack(DeviceSpec.reference(), materials)
    for gate_bias in (0.0, -2.0):
        bd = SchrodingerPoissonSolver(BandConfig()).solve_sp(stack, gate_bias)
        assert bd.charge_imbalance < 1e-4


def test_sheet_density_converges_with_grid(materials):
    """Test that halving the grid spacing moves n_s by less than 1 %."""
    stack = gate_stack(DeviceSpec.reference(), materials)
    coarse = SchrodingerPoissonSolver(BandConfig(grid_spacing=0.1)).solve_sp(stack)
    fine = SchrodingerPoissonSolver(BandConfig(grid_spacing=0.05)).solve_sp(stack)

    assert sheet_density(fine) == pytest.approx(sheet_density(coarse), rel=1e-2)


def test_sheet_density_falls_with_gate_bias(materials):
    stack = gate_stack(DeviceSpec.reference(), materials)
    table, _ = SchrodingerPoissonSolver(BandConfig()).ns_sweep(stack, [-1.0, -2.0, -3.0, -4.0])

    assert table["converged"].all()
    assert np.all(np.diff(table["n_s"].to_numpy()) < 0)


def test_reference_equilibrium(reference_solver, reference_equilibrium):
    """Test mass action and zero current on the full device at zero bias."""
    grid = reference_solver.grid
    state = reference_equilibrium
    np.testing.assert_allclose(
        state.n[grid.is_sc] * state.p[grid.is_sc], grid.ni[grid.is_sc] ** 2, rtol=1e-6
    )
    for current in state.currents.values():
        assert abs(current) < 1e-8


def test_no_drain_bias_no_current(reference_solver, reference_equilibrium):
    state = reference_solver.ramp({"gate": -2.0}, reference_equilibrium)
    assert abs(state.drain_current) < 1e-8


def test_mirror_symmetric_device(materials):
    """Test that swapping source and drain negates the drain current."""
    spec = DeviceSpec.reference(field_plate_length=0.0, gate_drain_spacing=1.0)
    mesh = build_mesh(spec, "coarse", materials)
    solver = DriftDiffusionSolver(mesh, PhysicsConfig(), materials)
    equilibrium = solver.solve_equilibrium()

    forward = solver.ramp({"drain": 0.1}, equilibrium)
    reverse = solver.ramp({"source": 0.1}, equilibrium)

    assert reverse.drain_current == pytest.approx(-forward.drain_current, rel=1e-2)
    assert forward.kirchhoff_error < 1e-6
    assert reverse.kirchhoff_error < 1e-6


def test_transfer_characteristic(reference_solver, reference_equilibrium):
    """Test threshold, swing and on-current against the expected bands."""
    curve = dc_analysis.transfer_sweep(reference_solver, TransferSweep(), reference_equilibrium)
    metrics = dc_analysis.extract_dc_metrics(curve)

    assert metrics.v_th == pytest.approx(-5.5, abs=2.0)
    assert 60.0 <= metrics.ss <= 250.0
    on_current = curve.currents[np.argmin(np.abs(curve.values))]
    assert 4.0 <= on_current <= 36.0
    assert np.all(curve.kirchhoff[curve.converged] < 1e-6)


def breakdown_or_cap(result):
    return np.inf if result.exceeded else result.v_br


def test_fieldplate_study_trends(materials):
    """Test that longer plates and higher-k passivation break down later."""
    study = StudyGrid()
    results = breakdown_study.fieldplate_study(
        DeviceSpec.reference(),
        study=study,
        materials=materials,
        refinement="coarse",
        workers=WORKERS,
    )
    cells = {(r.dielectric, r.field_plate_length): r for r in results}
    assert len(cells) == 18
    assert not any(r.criterion.startswith("failed") for r in results)

    for dielectric in study.dielectric_names:
        voltages = [
            breakdown_or_cap(cells[dielectric, length]) for length in study.field_plate_lengths
        ]
        assert all(a <= b for a, b in zip(voltages, voltages[1:])), dielectric
        assert cells[dielectric, 2.0].gate_edge_field < cells[dielectric, 1.0].gate_edge_field

    at_two = [breakdown_or_cap(cells[name, 2.0]) for name in ("HfO2", "Al2O3", "Si3N4")]
    assert at_two[0] >= at_two[1] >= at_two[2]


def test_zero_bias_admittance_is_reciprocal(reference_solver, reference_equilibrium):
    y = ac_solve(reference_solver, reference_equilibrium, np.array([1e6, 1e7]))
    np.testing.assert_allclose(y[:, 0, 1], y[:, 1, 0], rtol=0.0, atol=1e-9)


def test_low_frequency_transadmittance_is_dc_transconductance(
    reference_solver, reference_equilibrium
):
    """Test Re(Y21) at 1 MHz against a central difference of the DC drain current."""
    bias = {"gate": -2.0, "drain": 5.0}
    step = 0.05
    state = reference_solver.ramp(bias, reference_equilibrium)
    upper = reference_solver.ramp({**bias, "gate": bias["gate"] + step}, state)
    lower = reference_solver.ramp({**bias, "gate": bias["gate"] - step}, state)
    g_m = (upper.drain_current - lower.drain_current) / (2 * step) * 1e-3

    y = ac_solve(reference_solver, state, np.array([1e6]))

    assert g_m > 0
    assert y[0, 1, 0].real == pytest.approx(g_m, rel=2e-2)
