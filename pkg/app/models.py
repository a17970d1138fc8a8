"""Typed configuration records.

Each numeric field declares its canonical unit in ``json_schema_extra``; the
config parser converts user input into that unit and the resolved-config echo
writes it back out.
"""

from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field


def _unit(unit: str) -> dict:
    return {"unit": unit}


class DeviceSpec(BaseModel):
    """Field-plated HEMT cross-section.

    Lateral lengths are in um, epitaxial thicknesses in nm. Geometry fields
    have no default so an empty configuration fails validation.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    gate_length: Optional[float] = Field(None, json_schema_extra=_unit("um"))
    work_function: float = Field(5.23, json_schema_extra=_unit("eV"))
    field_plate_length: Optional[float] = Field(None, json_schema_extra=_unit("um"))
    gate_drain_spacing: Optional[float] = Field(None, json_schema_extra=_unit("um"))
    gate_source_spacing: float = Field(1.0, json_schema_extra=_unit("um"))
    contact_length: float = Field(1.0, json_schema_extra=_unit("um"))
    gate_height: float = Field(1.5, json_schema_extra=_unit("um"))
    passivation_thickness: Optional[float] = Field(None, json_schema_extra=_unit("um"))
    passivation: str = "HfO2"
    barrier_thickness: Optional[float] = Field(None, json_schema_extra=_unit("nm"))
    al_fraction: float = 0.295
    channel_thickness: Optional[float] = Field(None, json_schema_extra=_unit("nm"))
    implant_peak: float = Field(1e18, json_schema_extra=_unit("cm-3"))
    implant_length: float = Field(0.1, json_schema_extra=_unit("um"))
    barrier_doping: float = Field(1e16, json_schema_extra=_unit("cm-3"))
    channel_doping: float = Field(1e15, json_schema_extra=_unit("cm-3"))
    width: float = Field(1.0, json_schema_extra=_unit("mm"))
    relaxation: float = 0.0
    trap_density: float = Field(0.0, json_schema_extra=_unit("cm-2"))

    @classmethod
    def reference(cls, **overrides) -> "DeviceSpec":
        """The reference 0.7 um gate, 2 um field-plate device on a partially relaxed barrier."""
        values = dict(
            gate_length=0.7,
            field_plate_length=2.0,
            gate_drain_spacing=5.0,
            passivation_thickness=0.4,
            barrier_thickness=30.0,
            channel_thickness=180.0,
            relaxation=0.7,
        )
        values.update(overrides)
        return cls(**values)

    @property
    def gate_left(self) -> float:
        return self.contact_length + self.gate_source_spacing

    @property
    def gate_right(self) -> float:
        return self.gate_left + self.gate_length

    @property
    def field_plate_end(self) -> float:
        return self.gate_right + (self.field_plate_length or 0.0)

    @property
    def total_length(self) -> float:
        return self.gate_right + self.gate_drain_spacing + self.contact_length

    @property
    def surface_to_bottom(self) -> float:
        """Depth (um) of the bottom of the channel layer."""
        return (self.barrier_thickness + self.channel_thickness) * 1e-3


class PhysicsConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    high_field_mobility: bool = True
    beta: float = Field(2.0, ge=1.0, le=2.0)
    srh: bool = True
    auger: bool = True
    impact_ionization: bool = True
    statistics: Literal["boltzmann"] = "boltzmann"
    lattice_temperature: float = Field(300.0, gt=0.0, json_schema_extra=_unit("K"))
    energy_relaxation_time: float = Field(0.3e-12, gt=0.0, json_schema_extra=_unit("s"))
    potential_tolerance: float = Field(1e-6, gt=0.0, json_schema_extra=_unit("V"))
    gummel_tolerance: float = Field(1e-2, gt=0.0, json_schema_extra=_unit("V"))
    current_tolerance: float = Field(1e-6, gt=0.0)
    max_gummel_iterations: int = Field(100, ge=1)
    max_newton_steps: int = Field(25, ge=1)
    max_bias_step: float = Field(0.5, gt=0.0, json_schema_extra=_unit("V"))
    max_update: float = Field(1.0, gt=0.0, json_schema_extra=_unit("V"))


class BandConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    gate_bias: float = Field(0.0, json_schema_extra=_unit("V"))
    subbands: int = Field(3, ge=1)
    grid_spacing: float = Field(0.1, gt=0.0, json_schema_extra=_unit("nm"))
    barrier_window: float = Field(5.0, ge=0.0, json_schema_extra=_unit("nm"))
    channel_window: float = Field(20.0, gt=0.0, json_schema_extra=_unit("nm"))
    tolerance: float = Field(1e-6, gt=0.0, json_schema_extra=_unit("V"))
    max_iterations: int = Field(200, ge=1)
    sweep_start: float = Field(-4.0, json_schema_extra=_unit("V"))
    sweep_stop: float = Field(0.0, json_schema_extra=_unit("V"))
    sweep_step: float = Field(1.0, gt=0.0, json_schema_extra=_unit("V"))


class TransferSweep(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    v_ds: float = Field(1.0, json_schema_extra=_unit("V"))
    v_gs_start: float = Field(-8.0, json_schema_extra=_unit("V"))
    v_gs_stop: float = Field(0.0, json_schema_extra=_unit("V"))
    v_gs_step: float = Field(0.25, gt=0.0, le=0.25, json_schema_extra=_unit("V"))


class OutputSweep(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    v_gs_start: float = Field(-4.0, json_schema_extra=_unit("V"))
    v_gs_stop: float = Field(4.0, json_schema_extra=_unit("V"))
    v_gs_step: float = Field(2.0, gt=0.0, json_schema_extra=_unit("V"))
    v_ds_stop: float = Field(40.0, gt=0.0, json_schema_extra=_unit("V"))
    v_ds_step: float = Field(0.5, gt=0.0, le=0.5, json_schema_extra=_unit("V"))

    @property
    def gate_biases(self) -> List[float]:
        return _ladder(self.v_gs_start, self.v_gs_stop, self.v_gs_step)


class BreakdownSweep(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    v_gs_off: float = Field(-8.0, json_schema_extra=_unit("V"))
    coarse_step: float = Field(10.0, gt=0.0, json_schema_extra=_unit("V"))
    fine_step: float = Field(1.0, gt=0.0, json_schema_extra=_unit("V"))
    v_ds_max: float = Field(1500.0, gt=0.0, json_schema_extra=_unit("V"))
    i_crit: float = Field(1.0, gt=0.0, json_schema_extra=_unit("mA/mm"))
    probe_bias: float = Field(100.0, gt=0.0, json_schema_extra=_unit("V"))
    max_bias_step: float = Field(10.0, gt=0.0, json_schema_extra=_unit("V"))


class StudyGrid(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    fp_start: float = Field(1.0, gt=0.0, json_schema_extra=_unit("um"))
    fp_stop: float = Field(2.0, gt=0.0, json_schema_extra=_unit("um"))
    fp_step: float = Field(0.2, gt=0.0, json_schema_extra=_unit("um"))
    dielectrics: str = "HfO2, Al2O3, Si3N4"

    @property
    def field_plate_lengths(self) -> List[float]:
        return _ladder(self.fp_start, self.fp_stop, self.fp_step)

    @property
    def dielectric_names(self) -> List[str]:
        return [name.strip() for name in self.dielectrics.split(",") if name.strip()]


class AcSweep(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    v_gs: float = Field(-2.0, json_schema_extra=_unit("V"))
    v_ds: float = Field(20.0, json_schema_extra=_unit("V"))
    f_start: float = Field(1e6, gt=0.0, json_schema_extra=_unit("Hz"))
    f_stop: float = Field(1e11, gt=0.0, json_schema_extra=_unit("Hz"))
    points_per_decade: int = Field(40, ge=1)
    z0: float = Field(50.0, gt=0.0, json_schema_extra=_unit("ohm"))
    gate_resistance: float = Field(1.0, ge=0.0, json_schema_extra=_unit("ohm*mm"))
    touchstone: bool = True

    @property
    def frequencies(self) -> np.ndarray:
        decades = np.log10(self.f_stop) - np.log10(self.f_start)
        count = int(round(decades * self.points_per_decade)) + 1
        return np.logspace(np.log10(self.f_start), np.log10(self.f_stop), count)


class RunSection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    materials_file: Optional[str] = None
    output_dir: Optional[str] = None
    workers: Optional[int] = Field(None, ge=1)
    refinement: Literal["coarse", "normal", "fine"] = "normal"


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    device: DeviceSpec = Field(default_factory=DeviceSpec)
    physics: PhysicsConfig = Field(default_factory=PhysicsConfig)
    band: BandConfig = Field(default_factory=BandConfig)
    transfer: TransferSweep = Field(default_factory=TransferSweep)
    output: OutputSweep = Field(default_factory=OutputSweep)
    breakdown: BreakdownSweep = Field(default_factory=BreakdownSweep)
    study: StudyGrid = Field(default_factory=StudyGrid)
    ac: AcSweep = Field(default_factory=AcSweep)
    run: RunSection = Field(default_factory=RunSection)


def _ladder(start: float, stop: float, step: float) -> List[float]:
    """Inclusive arithmetic ladder, rounded so repeated builds are identical."""
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 9) for i in range(max(count, 0))]
