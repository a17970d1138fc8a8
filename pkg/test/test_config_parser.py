import pytest

from app.config import REFERENCE_DEVICE_FILE
from app.config_parser import dump_config, load_config, parse_config
from app.data_types import ConfigError, SpecValidationError
from app.device_mesh import validate_spec
from app.models import DeviceSpec, RunConfig


@pytest.fixture(scope="module")
def reference_config():
    return load_config(REFERENCE_DEVICE_FILE)


def test_reference_file_describes_reference_device(reference_config):
    """Test that the shipped configuration resolves to the reference device."""
    assert reference_config.device == DeviceSpec.reference()


def test_reference_file_units_are_converted(reference_config):
    assert reference_config.breakdown.v_ds_max == 1500.0
    assert reference_config.ac.f_stop == 1e11
    assert reference_config.ac.f_start == 1e6
    assert reference_config.physics.energy_relaxation_time == pytest.approx(0.3e-12)
    assert reference_config.study.dielectric_names == ["HfO2", "Al2O3", "Si3N4"]
    assert reference_config.run.refinement == "normal"


def test_empty_config_gives_defaults_without_geometry():
    """Test that an empty file parses but the device fails validation."""
    config = parse_config("")
    assert config == RunConfig()
    with pytest.raises(SpecValidationError, match="no geometry given"):
        validate_spec(config.device)


def test_unit_conversion_and_aliases():
    text = "[device]\nl_g = 700 nm\nt_barrier = 0.03 um\nphi_m = 5230 meV\nwidth = 0.1 cm\n"
    device = parse_config(text).device

    assert device.gate_length == pytest.approx(0.7)
    assert device.barrier_thickness == pytest.approx(30.0)
    assert device.work_function == pytest.approx(5.23)
    assert device.width == pytest.approx(1.0)


TEST_CASES = [
    (
        "[device]\nt_barrier = 30\n",
        "line 2: missing unit for 't_barrier' (expected nm)",
        "Missing unit",
    ),
    (
        "[device]\ngate_length = 0.7 furlong\n",
        "line 2: unknown unit 'furlong' for 'gate_length'",
        "Unknown unit",
    ),
    (
        "[device]\ngate_length = 0.7 V\n",
        "line 2: unit 'V' does not fit 'gate_length' (expected um)",
        "Wrong dimension",
    ),
    (
        "[device]\nal_fraction = 0.3 nm\n",
        "line 2: 'al_fraction' is dimensionless but got unit 'nm'",
        "Unit on a dimensionless value",
    ),
    (
        "[device]\ngate_length = 0..7 um\n",
        "line 2: malformed number '0..7 um' for 'gate_length'",
        "Malformed number",
    ),
    ("[physics]\nsrh = maybe\n", "line 2: 'maybe' is not a boolean for 'srh'", "Bad boolean"),
    ("[mystery]\nx = 1\n", "line 1: unknown section [mystery]", "Unknown section"),
    ("[ac]\nfoo = 1\n", "line 2: unknown key 'foo' in [ac]", "Unknown key"),
    (
        "[device]\nl_g = 1 um\ngate_length = 1 um\n",
        "line 3: 'gate_length' repeats 'gate_length' (set on line 2)",
        "Alias and full name",
    ),
    (
        "[band]\nsubbands = 2.5\n",
        "line 2: 'subbands' must be an integer, got '2.5'",
        "Fractional integer",
    ),
]


@pytest.mark.parametrize(
    "text,expected_error,description",
    TEST_CASES,
    ids=[case[2] for case in TEST_CASES],
)
def test_parse_errors(text, expected_error, description):
    """Test that each problem is reported with its line number."""
    with pytest.raises(ConfigError) as excinfo:
        parse_config(text)
    assert expected_error in excinfo.value.errors, f"Failed for case: {description}"


def test_all_errors_reported_together():
    text = "[device]\nt_barrier = 30\ngate_length = 0.7 V\n[mystery]\n"
    with pytest.raises(ConfigError) as excinfo:
        parse_config(text)
    assert len(excinfo.value.errors) == 3


def test_model_constraints_point_at_their_line():
    """Test that range violations found by the models carry the source line."""
    with pytest.raises(ConfigError) as excinfo:
        parse_config("[transfer]\nv_ds = 1 V\nv_gs_step = 0.5 V\n")
    (error,) = excinfo.value.errors
    assert error.startswith("line 3: transfer.v_gs_step:")


def test_dump_round_trip(reference_config):
    """Test that the resolved echo parses back to the same configuration."""
    text = dump_config(reference_config)
    assert text.startswith("# heterosim resolved configuration\n")
    assert "barrier_thickness = 30.0 nm" in text
    assert parse_config(text) == reference_config


def test_dump_omits_unset_fields():
    text = dump_config(RunConfig())
    assert "gate_length" not in text
    assert "workers" not in text
    assert parse_config(text) == RunConfig()


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.cfg")
