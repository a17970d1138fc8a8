import pytest
from scipy import constants

from app.data_types import MaterialsError
from app.materials_dao import MaterialsDAO, intrinsic_density

ELEMENTARY_CHARGE = constants.e


def test_alloy_endpoints_are_stored_records(materials):
    """Test that x = 0 and x = 1 return the stored endpoint sets unchanged."""
    assert materials.alloy_params(0.0) == materials.gan
    assert materials.alloy_params(1.0) == materials.aln


def test_bandgap_with_bowing(materials):
    """Test the interpolated AlGaN bandgap at the reference composition."""
    x = 0.295
    expected = x * 6.2 + (1 - x) * 3.4 - 1.0 * x * (1 - x)
    assert materials.bandgap(x) == pytest.approx(expected, rel=1e-12)
    assert materials.alloy_params(x).eg == pytest.approx(expected, rel=1e-12)


def test_affinity_follows_band_offset(materials):
    """Test that the barrier affinity drops by the conduction band offset."""
    x = 0.295
    barrier = materials.alloy_params(x)
    offset = 0.7 * (materials.bandgap(x) - 3.4)
    assert materials.conduction_band_offset(x) == pytest.approx(offset)
    assert barrier.chi == pytest.approx(4.1 - offset)


TEST_CASES = [
    (lambda m: m.alloy_params(-0.1), "Al mole fraction must lie in", "Negative fraction"),
    (lambda m: m.alloy_params(1.2), "Al mole fraction must lie in", "Fraction above one"),
    (
        lambda m: m.polarization_sheet_charge(0.3, 1.5),
        "relaxation must lie in",
        "Relaxation above one",
    ),
    (
        lambda m: m.dielectric_params("SiO2"),
        "Unknown dielectric 'SiO2'; supported: HfO2, Al2O3, Si3N4",
        "Unsupported dielectric",
    ),
]


@pytest.mark.parametrize(
    "call,message,description",
    TEST_CASES,
    ids=[case[2] for case in TEST_CASES],
)
def test_domain_errors(materials, call, message, description):
    """Test that out-of-range inputs raise MaterialsError."""
    with pytest.raises(MaterialsError, match=message):
        call(materials)


def test_sheet_charge_vanishes_without_heterojunction(materials):
    """Test that GaN on GaN carries no bound charge."""
    assert materials.polarization_sheet_charge(0.0) == 0.0


def test_sheet_charge_reference_values(materials):
    """Test the bound charge for a strained and a partially relaxed barrier."""
    strained = materials.polarization_sheet_charge(0.295, 0.0) / ELEMENTARY_CHARGE
    relaxed = materials.polarization_sheet_charge(0.295, 0.7) / ELEMENTARY_CHARGE

    # Hand evaluation of the stored endpoint constants
    assert strained == pytest.approx(1.649e13, rel=2e-3)
    assert relaxed == pytest.approx(1.165e13, rel=2e-3)


def test_sheet_charge_grows_with_aluminium(materials):
    """Test that more aluminium gives more sheet charge."""
    low, mid, high = (materials.polarization_sheet_charge(x) for x in (0.15, 0.295, 0.45))
    assert 0 < low < mid < high


@pytest.mark.parametrize("x", [0.1, 0.295, 0.5, 1.0])
def test_relaxed_barrier_keeps_only_spontaneous_charge(materials, x):
    """Test that a fully relaxed barrier carries the spontaneous polarization step."""
    spontaneous = (materials.alloy_params(x).psp - materials.gan.psp) * 1e-4
    assert materials.polarization_sheet_charge(x, 1.0) == pytest.approx(-spontaneous, rel=1e-12)


@pytest.mark.parametrize("relaxation", [0.0, 0.7, 1.0])
@pytest.mark.parametrize("x", [0.0, 0.295, 1.0 - 2e-6])
def test_sheet_charge_is_continuous_in_composition(materials, x, relaxation):
    here = materials.polarization_sheet_charge(x, relaxation)
    nearby = materials.polarization_sheet_charge(x + 1e-6, relaxation)
    assert nearby == pytest.approx(here, abs=1e-10)


@pytest.mark.parametrize(
    "name,k",
    [("HfO2", 25.0), ("Al2O3", 9.0), ("Si3N4", 7.5)],
)
def test_dielectric_constants(materials, name, k):
    """Test the permittivity of every supported passivation."""
    assert materials.dielectric_params(name).k == k
    assert name in materials.supported_dielectrics


def test_intrinsic_density_of_gan(materials):
    """Test that wide-gap GaN has a vanishing intrinsic density."""
    n_i = intrinsic_density(materials.gan, 300.0)
    assert 1e-11 < n_i < 1e-9


def test_dump_reloads_identically(materials):
    """Test that a dumped database parses back bit-exactly."""
    reloaded = MaterialsDAO.from_text(materials.dump())

    assert reloaded.semiconductors == materials.semiconductors
    assert reloaded.dielectrics == materials.dielectrics
    assert reloaded.bowing_eg == materials.bowing_eg
    assert reloaded.cbo_ratio == materials.cbo_ratio


def test_invalid_file_reports_all_problems():
    """Test that every problem of a bad file is listed with its line."""
    text = "[meta]\nversion = 1\n[semiconductor.GaN]\neg = abc\nfoo = 1\n[crystal.x]\n"
    with pytest.raises(MaterialsError) as excinfo:
        MaterialsDAO.from_text(text)

    message = str(excinfo.value)
    assert "line 4: 'abc' is not a number" in message
    assert "line 5: unknown key 'foo' in [semiconductor.GaN]" in message
    assert "line 6: unknown section [crystal.x]" in message
    assert "line 3: [semiconductor.GaN] is missing" in message


def test_missing_file(tmp_path):
    """Test that an unreadable file raises MaterialsError."""
    with pytest.raises(MaterialsError, match="Cannot read materials file"):
        MaterialsDAO.from_file(tmp_path / "absent.cfg")
