"""Run configuration files.

A configuration is structured text with one ``[section]`` per RunConfig field
(device, physics, band, transfer, output, breakdown, study, ac, run). Every
quantity with a physical unit must carry a unit suffix, e.g.
``barrier_thickness = 30 nm``; it is converted to the field's canonical unit.
"""

import logging
import re
from pathlib import Path
from typing import Dict, Optional, Tuple, Type, Union, get_args, get_origin

from pydantic import BaseModel, ValidationError

from app.data_types import ConfigError
from app.models import RunConfig
from app.structured_text import render, tokenize

logger = logging.getLogger(__name__)

# unit -> (dimension, factor to SI)
UNITS: Dict[str, Tuple[str, float]] = {
    "m": ("length", 1.0),
    "cm": ("length", 1e-2),
    "mm": ("length", 1e-3),
    "um": ("length", 1e-6),
    "nm": ("length", 1e-9),
    "V": ("voltage", 1.0),
    "mV": ("voltage", 1e-3),
    "kV": ("voltage", 1e3),
    "eV": ("energy", 1.0),
    "meV": ("energy", 1e-3),
    "cm-3": ("density", 1.0),
    "m-3": ("density", 1e-6),
    "cm-2": ("sheet", 1.0),
    "m-2": ("sheet", 1e-4),
    "s": ("time", 1.0),
    "ms": ("time", 1e-3),
    "us": ("time", 1e-6),
    "ns": ("time", 1e-9),
    "ps": ("time", 1e-12),
    "fs": ("time", 1e-15),
    "Hz": ("frequency", 1.0),
    "kHz": ("frequency", 1e3),
    "MHz": ("frequency", 1e6),
    "GHz": ("frequency", 1e9),
    "K": ("temperature", 1.0),
    "ohm": ("resistance", 1.0),
    "ohm*mm": ("line_resistance", 1.0),
    "ohm*um": ("line_resistance", 1e-3),
    "mA/mm": ("line_current", 1.0),
    "A/m": ("line_current", 1.0),
    "A/cm": ("line_current", 10.0),
}

# Short names accepted in [device]
DEVICE_ALIASES = {
    "l_g": "gate_length",
    "l_fp": "field_plate_length",
    "l_gd": "gate_drain_spacing",
    "l_gs": "gate_source_spacing",
    "t_pass": "passivation_thickness",
    "t_barrier": "barrier_thickness",
    "t_channel": "channel_thickness",
    "phi_m": "work_function",
}

NUMBER = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)\s*(\S+)?$")
TRUE_WORDS = ("true", "yes", "on", "1")
FALSE_WORDS = ("false", "no", "off", "0")


def _section_models() -> Dict[str, Type[BaseModel]]:
    return {
        name: info.annotation for name, info in RunConfig.model_fields.items()
    }


def _canonical_unit(model: Type[BaseModel], key: str) -> Optional[str]:
    extra = model.model_fields[key].json_schema_extra
    if isinstance(extra, dict):
        return extra.get("unit")
    return None


def _kind(model: Type[BaseModel], key: str) -> str:
    annotation = model.model_fields[key].annotation
    if get_origin(annotation) is Union:
        annotation = next(arg for arg in get_args(annotation) if arg is not type(None))
    if annotation is bool:
        return "bool"
    if annotation is int:
        return "int"
    if annotation is float:
        return "float"
    return "str"


def _convert(raw: str, unit: Optional[str], kind: str, key: str) -> object:
    """Convert one raw value; raises ValueError with a user-facing message."""
    if kind == "bool":
        word = raw.lower()
        if word in TRUE_WORDS:
            return True
        if word in FALSE_WORDS:
            return False
        raise ValueError(f"'{raw}' is not a boolean for '{key}'")
    if kind == "str":
        return raw.strip("\"'")

    match = NUMBER.match(raw)
    if not match:
        raise ValueError(f"malformed number '{raw}' for '{key}'")
    number, suffix = match.group(1), match.group(2)

    if unit is None:
        if suffix is not None:
            raise ValueError(f"'{key}' is dimensionless but got unit '{suffix}'")
        if kind == "int":
            try:
                return int(number)
            except ValueError:
                raise ValueError(f"'{key}' must be an integer, got '{raw}'") from None
        return float(number)

    if suffix is None:
        raise ValueError(f"missing unit for '{key}' (expected {unit})")
    if suffix not in UNITS:
        raise ValueError(f"unknown unit '{suffix}' for '{key}'")
    dimension, factor = UNITS[suffix]
    expected, canonical = UNITS[unit]
    if dimension != expected:
        raise ValueError(f"unit '{suffix}' does not fit '{key}' (expected {unit})")
    value = float(number)
    if suffix != unit:
        value = value * factor / canonical
    return value


def parse_config(text: str) -> RunConfig:
    """Parse configuration text into a validated RunConfig.

    Missing sections and keys fall back to their defaults; an empty text gives
    a pure-default configuration.

    Args:
        text: Configuration contents

    Returns:
        The resolved configuration.

    Raises:
        ConfigError: Listing every problem, each prefixed with its line number
    """
    entries, sections, errors = tokenize(text)
    models = _section_models()
    values: Dict[str, Dict[str, object]] = {}
    lines: Dict[Tuple[str, str], int] = {}

    for section, line in sections.items():
        if section not in models:
            errors.append(f"line {line}: unknown section [{section}]")

    for entry in entries:
        model = models.get(entry.section)
        if model is None:
            continue
        key = entry.key
        if entry.section == "device":
            key = DEVICE_ALIASES.get(key, key)
        if key not in model.model_fields:
            errors.append(f"line {entry.line}: unknown key '{entry.key}' in [{entry.section}]")
            continue
        if (entry.section, key) in lines:
            errors.append(
                f"line {entry.line}: '{entry.key}' repeats '{key}' "
                f"(set on line {lines[(entry.section, key)]})"
            )
            continue
        try:
            value = _convert(entry.value, _canonical_unit(model, key), _kind(model, key), entry.key)
        except ValueError as e:
            errors.append(f"line {entry.line}: {e}")
            continue
        values.setdefault(entry.section, {})[key] = value
        lines[(entry.section, key)] = entry.line

    if not errors:
        try:
            return RunConfig(**values)
        except ValidationError as e:
            for error in e.errors():
                location = tuple(str(part) for part in error["loc"])
                line = lines.get(location[:2]) if len(location) >= 2 else None
                prefix = f"line {line}: " if line else ""
                errors.append(f"{prefix}{'.'.join(location)}: {error['msg']}")

    raise ConfigError(errors)


def load_config(path: Union[str, Path]) -> RunConfig:
    """Read and parse a configuration file.

    Raises:
        ConfigError: If the file cannot be read or does not parse
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError([f"cannot read {path}: {e}"]) from e
    logger.info("Loading configuration from %s", path)
    return parse_config(text)


def _format(value: object, unit: Optional[str]) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        text = repr(value)
        return f"{text} {unit}" if unit else text
    return str(value)


def dump_config(config: RunConfig, header: str = "heterosim resolved configuration") -> str:
    """Render a configuration with every default expanded.

    Floats use repr and carry their canonical unit, so ``parse_config`` of the
    output reproduces ``config`` exactly. Unset optional fields are omitted.
    """
    sections: Dict[str, Dict[str, str]] = {}
    for name in RunConfig.model_fields:
        record = getattr(config, name)
        rendered: Dict[str, str] = {}
        for key in type(record).model_fields:
            value = getattr(record, key)
            if value is None:
                continue
            rendered[key] = _format(value, _canonical_unit(type(record), key))
        sections[name] = rendered
    return render(sections, header=header)
