"""Common test fixtures and configuration."""

import os

import pytest
from dotenv import load_dotenv

from app.device_mesh import build_resistor_mesh
from app.materials_dao import MaterialsDAO
from app.models import DeviceSpec, PhysicsConfig

# Load environment variables from .env file
load_dotenv()


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-device simulation taking minutes")


def pytest_collection_modifyitems(config, items):
    """Skip slow tests unless HETEROSIM_SLOW_TESTS is set."""
    if os.environ.get("HETEROSIM_SLOW_TESTS") not in (None, "", "0"):
        return
    skip = pytest.mark.skip(reason="HETEROSIM_SLOW_TESTS not set")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def materials():
    """The shipped materials database."""
    return MaterialsDAO.from_file()


@pytest.fixture
def reference_spec():
    """The reference field-plated device."""
    return DeviceSpec.reference()


@pytest.fixture
def resistor_mesh():
    """A 5 um long, uniformly doped n-type GaN bar."""
    return build_resistor_mesh()


@pytest.fixture
def ohmic_physics():
    """Low-field physics: no velocity saturation, no generation."""
    return PhysicsConfig(
        high_field_mobility=False,
        srh=False,
        auger=False,
        impact_ionization=False,
    )
