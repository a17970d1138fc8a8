import os
from pathlib import Path

# Base paths
ROOT_DIR = Path(__file__).parent.parent
ASSETS_DIR = ROOT_DIR / "assets"

# Materials database
MATERIALS_FILE = Path(os.environ.get("HETEROSIM_MATERIALS") or ASSETS_DIR / "materials.cfg")
REFERENCE_DEVICE_FILE = ASSETS_DIR / "reference_device.cfg"

# Run settings
OUTPUT_DIR = Path(os.environ.get("HETEROSIM_OUTPUT_DIR") or "results")
WORKERS = int(os.environ.get("HETEROSIM_WORKERS") or 1)
LOG_LEVEL = os.environ.get("HETEROSIM_LOG_LEVEL") or "INFO"

# Artifact version written into every run report
VERSION = "0.3.0"

# Device width (mm) assumed for absolute currents in reports
DEFAULT_WIDTH_MM = 1.0

# CSV number format: 9 significant digits
CSV_FLOAT_FORMAT = "%.9g"
