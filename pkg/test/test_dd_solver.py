import numpy as np
import pytest
from scipy import constants

from app.data_types import ConvergenceError
from app.dd_solver import DriftDiffusionSolver
from app.models import PhysicsConfig

BAR_LENGTH_CM = 5e-4
BAR_HEIGHT_CM = 0.5e-4
WIDTH_CM = 0.1
MU_N = 1500.0
DOPING = 1e17


@pytest.fixture
def resistor(resistor_mesh, ohmic_physics, materials):
    return DriftDiffusionSolver(resistor_mesh, ohmic_physics, materials)


@pytest.fixture
def equilibrium(resistor):
    return resistor.solve_equilibrium()


def ohmic_current_ma(voltage):
    field = voltage / BAR_LENGTH_CM
    return constants.e * DOPING * MU_N * field * BAR_HEIGHT_CM * WIDTH_CM * 1e3


def test_equilibrium_mass_action(resistor, equilibrium):
    """Test that np = n_i^2 on every semiconductor node at zero bias."""
    ni = resistor.grid.ni
    np.testing.assert_allclose(equilibrium.n * equilibrium.p, ni**2, rtol=1e-6)
    np.testing.assert_allclose(equilibrium.n, DOPING, rtol=1e-6)


def test_equilibrium_carries_no_current(equilibrium):
    for current in equilibrium.currents.values():
        assert abs(current) < 1e-8


def test_zero_drain_bias_gives_zero_current(resistor, equilibrium):
    state = resistor.solve_bias({"drain": 0.0}, equilibrium)
    assert abs(state.drain_current) < 1e-8


@pytest.mark.parametrize("voltage", [0.05, -0.05])
def test_resistor_matches_ohms_law(resistor, equilibrium, voltage):
    """Test the bar current against q n mu E A."""
    state = resistor.solve_bias({"drain": voltage}, equilibrium)

    assert state.drain_current == pytest.approx(ohmic_current_ma(voltage), rel=5e-3)
    assert state.currents["source"] == pytest.approx(-state.drain_current, rel=1e-6)
    assert state.kirchhoff_error < 1e-6


def test_ramp_reaches_target(resistor, equilibrium):
    """Test that a multi-step ramp lands on the requested bias."""
    state = resistor.ramp({"drain": 1.0}, equilibrium, max_step=0.25)
    assert state.biases["drain"] == 1.0
    assert state.drain_current == pytest.approx(ohmic_current_ma(1.0), rel=5e-3)


def test_ramp_halves_and_gives_up(resistor, equilibrium, mocker):
    """Test that a ramp whose every step fails stops below the minimum step."""
    solve = mocker.patch.object(
        resistor, "solve_bias", side_effect=ConvergenceError("diverged", history=[1.0])
    )
    with pytest.raises(ConvergenceError, match="Bias ramp stalled") as excinfo:
        resistor.ramp({"drain": 1.0}, equilibrium, max_step=0.5, min_step=0.1)

    # 0.5 -> 0.25 -> 0.125 -> 0.0625
    assert solve.call_count == 3
    assert excinfo.value.history == [1.0]


def test_unbalanced_terminal_currents_are_rejected(resistor, equilibrium, mocker):
    """Test that a state violating Kirchhoff's law is not returned as converged."""
    mocker.patch.object(
        resistor.grid,
        "terminal_currents",
        return_value={"source": -1.0, "drain": 1.1, "gate": 0.0},
    )
    with pytest.raises(ConvergenceError, match="violate Kirchhoff") as excinfo:
        resistor.solve_bias({"drain": 0.05}, equilibrium)

    assert excinfo.value.bias["drain"] == 0.05


def test_equilibrium_temperature_is_lattice(resistor, equilibrium):
    temperature = resistor.electron_temperature_post(equilibrium)
    np.testing.assert_allclose(temperature, 300.0, atol=1e-9)


def heating(tau, field):
    return 2.0 / 3.0 * constants.e * MU_N * field**2 * tau / constants.k


def test_uniform_bar_electron_temperature(resistor_mesh, materials):
    """Test the local Joule-relaxation balance in the middle of a biased bar."""
    results = {}
    for tau in (0.3e-12, 0.6e-12):
        physics = PhysicsConfig(
            high_field_mobility=False,
            srh=False,
            auger=False,
            impact_ionization=False,
            energy_relaxation_time=tau,
        )
        solver = DriftDiffusionSolver(resistor_mesh, physics, materials)
        state = solver.solve_bias({"drain": 0.5})
        temperature = solver.electron_temperature_post(state)
        middle = 2 * resistor_mesh.nx + resistor_mesh.nx // 2
        results[tau] = temperature[middle] - 300.0

    field = 0.5 / BAR_LENGTH_CM
    assert results[0.3e-12] == pytest.approx(heating(0.3e-12, field), rel=1e-2)
    assert results[0.6e-12] == pytest.approx(2 * results[0.3e-12], rel=1e-2)


def test_field_dump(resistor, equilibrium):
    """Test the node table layout."""
    table = resistor.field_dump(equilibrium)
    assert list(table.columns) == ["x", "y", "psi", "n", "p", "field", "T_n"]
    assert len(table) == resistor.mesh.num_nodes
    assert table["T_n"].isna().all()
