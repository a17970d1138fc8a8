import pytest

from app.data_types import (
    ConfigError,
    ConvergenceError,
    MaterialsError,
    RunReport,
    SchrodingerError,
    SimulationError,
    SingularNetworkError,
    SpecValidationError,
)
from app.main import EXIT_INVALID, EXIT_OK, EXIT_SOLVER, EXIT_USAGE, main


@pytest.fixture
def run_command(mocker):
    mocker.patch("app.main.load_config", return_value="config")
    return mocker.patch(
        "app.main.run_command",
        return_value=RunReport("dc", "0.3.0", "", {}, ["transfer.csv"]),
    )


def test_success(run_command, tmp_path):
    code = main(["dc", "--out", str(tmp_path), "--workers", "2", "--refinement", "coarse"])

    assert code == EXIT_OK
    run_command.assert_called_once_with(
        "config", "dc", output_dir=str(tmp_path), workers=2, refinement="coarse"
    )


TEST_CASES = [
    (["sweep"], "Unknown command"),
    (["dc", "--workers", "0"], "No workers"),
]


@pytest.mark.parametrize("argv,description", TEST_CASES, ids=[case[-1] for case in TEST_CASES])
def test_usage_errors(run_command, argv, description):
    assert main(argv) == EXIT_USAGE, f"Failed for case: {description}"
    run_command.assert_not_called()


def test_argparse_errors_exit_with_usage_code():
    with pytest.raises(SystemExit) as excinfo:
        main([])
    assert excinfo.value.code == EXIT_USAGE

    with pytest.raises(SystemExit) as excinfo:
        main(["dc", "--refinement", "ultra"])
    assert excinfo.value.code == EXIT_USAGE


TEST_CASES = [
    (ConfigError(["line 2: unknown section [x]"]), EXIT_INVALID, "Config error"),
    (SpecValidationError(["gate_length must be > 0"]), EXIT_INVALID, "Invalid device"),
    (MaterialsError("Unknown dielectric 'SiO2'"), EXIT_INVALID, "Materials error"),
    (ConvergenceError("Bias ramp stalled", history=[1.0]), EXIT_SOLVER, "Ramp stalled"),
    (SchrodingerError("Eigensolve failed"), EXIT_SOLVER, "Eigensolve failed"),
    (SingularNetworkError("singular", frequency=1e9), EXIT_SOLVER, "Singular network"),
    (SimulationError("Mesh generation failed"), EXIT_SOLVER, "Other simulation error"),
]


@pytest.mark.parametrize(
    "error,expected_code,description",
    TEST_CASES,
    ids=[case[2] for case in TEST_CASES],
)
def test_error_exit_codes(run_command, error, expected_code, description):
    run_command.side_effect = error
    assert main(["breakdown"]) == expected_code, f"Failed for case: {description}"


def test_missing_config_file(tmp_path):
    assert main(["band", "--config", str(tmp_path / "absent.cfg")]) == EXIT_INVALID
