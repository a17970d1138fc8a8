import logging
from dataclasses import asdict, fields
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
from scipy import constants

from app.config import MATERIALS_FILE
from app.data_types import DielectricParams, MaterialParams, MaterialsError
from app.structured_text import render, tokenize

logger = logging.getLogger(__name__)

SEMICONDUCTOR_KEYS = [f.name for f in fields(MaterialParams)]
DIELECTRIC_KEYS = ["k", "e_crit"]
META_KEYS = ["version", "bowing_eg", "cbo_ratio"]
ENDPOINTS = ("GaN", "AlN")


def effective_dos(mass: float, temperature: float) -> float:
    """Effective density of states 2(2 pi m kT / h^2)^(3/2) in cm^-3."""
    m = mass * constants.m_e
    kt = constants.k * temperature
    return 2.0 * (2.0 * np.pi * m * kt / constants.h**2) ** 1.5 * 1e-6


def intrinsic_density(params: MaterialParams, temperature: float = 300.0) -> float:
    """Intrinsic carrier density in cm^-3 for non-degenerate statistics."""
    nc = effective_dos(params.me, temperature)
    nv = effective_dos(params.mh, temperature)
    vt = constants.k * temperature / constants.e
    return float(np.sqrt(nc * nv) * np.exp(-params.eg / (2.0 * vt)))


class MaterialsDAO:
    """Read-only access to the semiconductor and dielectric parameter file.

    Instances are immutable after load and may be shared across solver
    instances and worker processes.
    """

    def __init__(
        self,
        semiconductors: Dict[str, MaterialParams],
        dielectrics: Dict[str, DielectricParams],
        bowing_eg: float = 1.0,
        cbo_ratio: float = 0.7,
        version: int = 1,
    ):
        """Initialize the database.

        Args:
            semiconductors: Endpoint parameter sets keyed by name; must hold GaN and AlN
            dielectrics: Passivation dielectrics keyed by name
            bowing_eg: AlGaN bandgap bowing parameter (eV)
            cbo_ratio: Share of the bandgap difference taken by the conduction band
            version: Parameter file version

        Raises:
            MaterialsError: If an endpoint is missing
        """
        missing = [name for name in ENDPOINTS if name not in semiconductors]
        if missing:
            raise MaterialsError(f"Missing semiconductor endpoint(s): {', '.join(missing)}")
        self._semiconductors = dict(semiconductors)
        self._dielectrics = dict(dielectrics)
        self.bowing_eg = bowing_eg
        self.cbo_ratio = cbo_ratio
        self.version = version

        derived_chi = self.gan.chi - cbo_ratio * (self.aln.eg - self.gan.eg)
        if abs(derived_chi - self.aln.chi) > 1e-6:
            logger.warning(
                "AlN electron affinity %.6g eV disagrees with the band offset rule (%.6g eV)",
                self.aln.chi,
                derived_chi,
            )

    @classmethod
    def from_file(cls, path: Optional[Union[str, Path]] = None) -> "MaterialsDAO":
        path = Path(path) if path else MATERIALS_FILE
        logger.info("Loading materials from %s", path)
        try:
            text = path.read_text()
        except OSError as e:
            raise MaterialsError(f"Cannot read materials file {path}: {e}") from e
        return cls.from_text(text)

    @classmethod
    def from_text(cls, text: str) -> "MaterialsDAO":
        """Parse a parameter file. All problems are reported together.

        Raises:
            MaterialsError: On unknown sections or keys, missing keys or bad numbers
        """
        entries, sections, errors = tokenize(text)
        values: Dict[str, Dict[str, float]] = {name: {} for name in sections}

        for entry in entries:
            allowed = cls._allowed_keys(entry.section)
            if allowed is None:
                continue
            if entry.key not in allowed:
                errors.append(f"line {entry.line}: unknown key '{entry.key}' in [{entry.section}]")
                continue
            try:
                values[entry.section][entry.key] = float(entry.value)
            except ValueError:
                errors.append(f"line {entry.line}: '{entry.value}' is not a number")

        semiconductors: Dict[str, MaterialParams] = {}
        dielectrics: Dict[str, DielectricParams] = {}
        meta = {"version": 1.0, "bowing_eg": 1.0, "cbo_ratio": 0.7}

        for section, line in sections.items():
            allowed = cls._allowed_keys(section)
            if allowed is None:
                errors.append(f"line {line}: unknown section [{section}]")
                continue
            missing = [key for key in allowed if key not in values[section]]
            if section == "meta":
                meta.update(values[section])
                continue
            if missing:
                errors.append(f"line {line}: [{section}] is missing {', '.join(missing)}")
                continue
            kind, name = section.split(".", 1)
            if kind == "semiconductor":
                semiconductors[name] = MaterialParams(**values[section])
            else:
                dielectrics[name] = DielectricParams(name=name, **values[section])

        if errors:
            raise MaterialsError("Invalid materials file:\n" + "\n".join(errors))

        return cls(
            semiconductors=semiconductors,
            dielectrics=dielectrics,
            bowing_eg=meta["bowing_eg"],
            cbo_ratio=meta["cbo_ratio"],
            version=int(meta["version"]),
        )

    @staticmethod
    def _allowed_keys(section: str) -> Optional[List[str]]:
        if section == "meta":
            return META_KEYS
        if section.startswith("semiconductor.") and len(section) > len("semiconductor."):
            return SEMICONDUCTOR_KEYS
        if section.startswith("dielectric.") and len(section) > len("dielectric."):
            return DIELECTRIC_KEYS
        return None

    def dump(self) -> str:
        """Serialize the database; floats use repr so a reload is bit-exact."""
        sections: Dict[str, Dict[str, str]] = {
            "meta": {
                "version": str(self.version),
                "bowing_eg": repr(self.bowing_eg),
                "cbo_ratio": repr(self.cbo_ratio),
            }
        }
        for name, params in self._semiconductors.items():
            sections[f"semiconductor.{name}"] = {k: repr(v) for k, v in asdict(params).items()}
        for name, params in self._dielectrics.items():
            sections[f"dielectric.{name}"] = {"k": repr(params.k), "e_crit": repr(params.e_crit)}
        return render(sections, header="heterosim materials database")

    @property
    def gan(self) -> MaterialParams:
        return self._semiconductors["GaN"]

    @property
    def aln(self) -> MaterialParams:
        return self._semiconductors["AlN"]

    @property
    def semiconductors(self) -> Dict[str, MaterialParams]:
        return dict(self._semiconductors)

    @property
    def dielectrics(self) -> Dict[str, DielectricParams]:
        return dict(self._dielectrics)

    @property
    def supported_dielectrics(self) -> List[str]:
        return list(self._dielectrics)

    def bandgap(self, x: float) -> float:
        self._check_fraction(x)
        gan, aln = self.gan, self.aln
        return x * aln.eg + (1.0 - x) * gan.eg - self.bowing_eg * x * (1.0 - x)

    def conduction_band_offset(self, x: float) -> float:
        """Conduction band step (eV) of Al_xGaN on GaN."""
        return self.cbo_ratio * (self.bandgap(x) - self.gan.eg)

    def alloy_params(self, x: float) -> MaterialParams:
        """Parameters of Al_xGa_(1-x)N.

        Every field interpolates linearly between GaN and AlN except the
        bandgap, which carries the bowing term, and the electron affinity,
        which follows the conduction band offset.

        Args:
            x: Al mole fraction in [0, 1]

        Returns:
            The interpolated parameter set; the stored records at x = 0 and x = 1.

        Raises:
            MaterialsError: If x is outside [0, 1]
        """
        self._check_fraction(x)
        if x == 0.0:
            return self.gan
        if x == 1.0:
            return self.aln

        gan, aln = asdict(self.gan), asdict(self.aln)
        mixed = {key: x * aln[key] + (1.0 - x) * gan[key] for key in SEMICONDUCTOR_KEYS}
        mixed["eg"] = self.bandgap(x)
        mixed["chi"] = self.gan.chi - self.conduction_band_offset(x)
        return MaterialParams(**mixed)

    def polarization_sheet_charge(self, x: float, relaxation: float = 0.0) -> float:
        """Bound sheet charge at an Al_xGaN-on-GaN interface.

        Args:
            x: Al mole fraction of the barrier in [0, 1]
            relaxation: Strain relaxation of the barrier in [0, 1]; 0 is fully strained

        Returns:
            Positive sheet charge density in C/cm^2.

        Raises:
            MaterialsError: If either argument is out of range
        """
        self._check_fraction(x)
        if not 0.0 <= relaxation <= 1.0:
            raise MaterialsError(f"relaxation must lie in [0, 1], got {relaxation}")

        barrier = self.alloy_params(x)
        strain = (self.gan.a - barrier.a) / barrier.a
        piezo = 2.0 * strain * (barrier.e31 - barrier.e33 * barrier.c13 / barrier.c33)
        total = (barrier.psp - self.gan.psp) + (1.0 - relaxation) * piezo
        # C/m^2 -> C/cm^2; the bound charge on the barrier side is -total
        return -total * 1e-4

    def dielectric_params(self, name: str) -> DielectricParams:
        """Look up a passivation dielectric.

        Raises:
            MaterialsError: If the name is not in the database
        """
        try:
            return self._dielectrics[name]
        except KeyError:
            raise MaterialsError(
                f"Unknown dielectric '{name}'; supported: {', '.join(self._dielectrics)}"
            ) from None

    @staticmethod
    def _check_fraction(x: float) -> None:
        if not 0.0 <= x <= 1.0:
            raise MaterialsError(f"Al mole fraction must lie in [0, 1], got {x}")
