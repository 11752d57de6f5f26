"""
QPUMP - Pydantic Models
Tipos de dominio y documento de configuración; inmutables después de validar
"""

import math
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from qpump.core.constants import CONSTANTS
from qpump.models.presets import (
    DEFAULT_FLUX_GRID,
    DEFAULT_PULSE_COUNTS,
    DEFAULT_READOUT_GRID,
    DEFAULT_RECOVERY_DELAYS,
    DEFAULT_TEMPERATURES,
    DEVICE_PRESETS,
)

_FROZEN = ConfigDict(extra="forbid", frozen=True)


def _convert_mev_keys(data: Any, fields: Tuple[str, ...]) -> Any:
    """Acepta `<campo>_mev` y lo convierte a GHz"""
    if not isinstance(data, dict):
        return data
    data = dict(data)
    for name in fields:
        key = f"{name}_mev"
        if key in data:
            if name in data:
                raise ValueError(f"{name} given twice ({name} and {key})")
            data[name] = float(data.pop(key)) * CONSTANTS.mev_to_ghz
    return data


def _positive(name: str, value: float) -> float:
    if not value > 0:
        raise ValueError(f"{name} must be positive")
    return value


class QpDistribution(str, Enum):
    """Distribución de cuasipartículas entre islas para T̃1qp(f)"""
    TRAPPED = "trapped"
    UNIFORM = "uniform"


class DeviceParams(BaseModel):
    """Constantes del qubit y sus junturas"""

    model_config = _FROZEN

    omega0: float
    eps_slope: float
    ej_large: float
    gap: float
    me_large: float
    alpha: float
    me_small_table: Tuple[Tuple[float, float], ...]

    @model_validator(mode="before")
    @classmethod
    def _apply_preset(cls, data: Any) -> Any:
        if isinstance(data, dict) and "preset" in data:
            data = dict(data)
            name = data.pop("preset")
            if name not in DEVICE_PRESETS:
                raise ValueError(f"unknown device preset '{name}' (known: {', '.join(DEVICE_PRESETS)})")
            # Los valores explícitos sobreescriben el preset, en cualquiera de sus unidades
            base = dict(DEVICE_PRESETS[name])
            for key in list(base):
                stem = key[:-4] if key.endswith("_mev") else key
                if stem in data or f"{stem}_mev" in data:
                    base.pop(key)
            data = {**base, **data}
        return _convert_mev_keys(data, ("omega0", "ej_large", "gap"))

    @field_validator("omega0", "ej_large", "gap")
    @classmethod
    def _energies_positive(cls, value: float, info) -> float:
        return _positive(info.field_name, value)

    @field_validator("eps_slope", "alpha")
    @classmethod
    def _non_negative(cls, value: float, info) -> float:
        if value < 0:
            raise ValueError(f"{info.field_name} must be non-negative")
        return value

    @field_validator("me_large")
    @classmethod
    def _unit_interval(cls, value: float) -> float:
        if not 0.0 <= value <= 1.0:
            raise ValueError("me_large must lie in [0, 1]")
        return value

    @field_validator("me_small_table")
    @classmethod
    def _check_table(cls, table: Tuple[Tuple[float, float], ...]) -> Tuple[Tuple[float, float], ...]:
        if len(table) < 2:
            raise ValueError("me_small_table needs at least two points")
        fluxes = [f for f, _ in table]
        if any(b <= a for a, b in zip(fluxes, fluxes[1:])):
            raise ValueError("me_small_table flux values must be strictly increasing")
        if any(not 0.0 <= me <= 1.0 for _, me in table):
            raise ValueError("me_small_table values must lie in [0, 1]")
        at_zero = [me for f, me in table if f == 0.0]
        if not at_zero or at_zero[0] != 0.0:
            raise ValueError("me_small_table must contain (0, 0)")
        return table


class DecayParams(BaseModel):
    """Parámetros de la ley de decaimiento: ⟨n_qp⟩, T̃1qp, T1R"""

    model_config = _FROZEN

    n_avg: float
    t1qp: float
    t1r: float

    @field_validator("n_avg")
    @classmethod
    def _n_non_negative(cls, value: float) -> float:
        if not value >= 0:
            raise ValueError("n_avg must be non-negative")
        return value

    @field_validator("t1qp", "t1r")
    @classmethod
    def _times_positive(cls, value: float, info) -> float:
        return _positive(info.field_name, value)


class BathParams(BaseModel):
    """Reservorio de cuasipartículas"""

    model_config = _FROZEN

    gamma_in: float
    gamma_out: float
    delta_e: float
    energy_resolved: bool = True
    excitation_ratio: float = 1.0
    relax_exit_probability: float = Field(default=1.0, ge=0.0, le=1.0)

    @model_validator(mode="before")
    @classmethod
    def _convert_units(cls, data: Any) -> Any:
        return _convert_mev_keys(data, ("delta_e",))

    @field_validator("gamma_in", "excitation_ratio")
    @classmethod
    def _non_negative(cls, value: float, info) -> float:
        if not value >= 0:
            raise ValueError(f"{info.field_name} must be non-negative")
        return value

    @field_validator("gamma_out", "delta_e")
    @classmethod
    def _strictly_positive(cls, value: float, info) -> float:
        return _positive(info.field_name, value)

    @property
    def steady_mean(self) -> float:
        return self.gamma_in / self.gamma_out


class PulseSequence(BaseModel):
    """Protocolo de bombeo: N pulsos separados ΔT, pulso de prueba y lecturas"""

    model_config = _FROZEN

    n_pulses: int = Field(default=0, ge=0)
    spacing: float = 10.0
    theta: float = math.pi
    probe_delay: float = Field(default=0.0, ge=0.0)
    readout_grid: Tuple[float, ...] = DEFAULT_READOUT_GRID
    repetition_period: float = 2000.0

    @model_validator(mode="after")
    def _check_sequence(self) -> "PulseSequence":
        if self.n_pulses > 0 and not self.spacing > 0:
            raise ValueError("spacing must be positive when n_pulses > 0")
        grid = self.readout_grid
        if not grid:
            raise ValueError("readout_grid must not be empty")
        if grid[0] < 0:
            raise ValueError("readout_grid must start at a non-negative delay")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("readout_grid must be strictly increasing")
        if not self.repetition_period > grid[-1]:
            raise ValueError("repetition_period must exceed the largest readout delay")
        return self

    @property
    def flip_probability(self) -> float:
        return math.sin(self.theta / 2.0) ** 2


class DecayTrace(BaseModel):
    """Población excitada vs retardo de lectura"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    delays: Tuple[float, ...]
    populations: Tuple[float, ...]
    stderr: Tuple[float, ...] = ()
    n_trials: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_trace(self) -> "DecayTrace":
        if len(self.delays) != len(self.populations):
            raise ValueError("delays and populations must have equal lengths")
        if self.stderr and len(self.stderr) != len(self.delays):
            raise ValueError("stderr must be empty or match delays in length")
        if any(b <= a for a, b in zip(self.delays, self.delays[1:])):
            raise ValueError("delays must be strictly increasing")
        if any(not 0.0 <= p <= 1.0 for p in self.populations):
            raise ValueError("populations must lie in [0, 1]")
        if any(not s >= 0 for s in self.stderr):
            raise ValueError("stderr must be non-negative")
        return self

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.delays, dtype=float)

    @property
    def p(self) -> np.ndarray:
        return np.asarray(self.populations, dtype=float)

    @property
    def sigma(self) -> Optional[np.ndarray]:
        return np.asarray(self.stderr, dtype=float) if self.stderr else None

    def normalized(self) -> "DecayTrace":
        """Traza dividida por su población en τ=0 (recortada a [0, 1])"""
        p0 = self.populations[0]
        if p0 <= 0:
            raise ValueError("cannot normalize a trace with zero initial population")
        pops = tuple(min(1.0, p / p0) for p in self.populations)
        errs = tuple(s / p0 for s in self.stderr)
        return self.model_copy(update={"populations": pops, "stderr": errs})


class FitOptions(BaseModel):
    """Opciones del ajuste por mínimos cuadrados"""

    model_config = _FROZEN

    fix_t1r: Optional[float] = None
    fix_n_avg: Optional[float] = None
    init: Optional[DecayParams] = None
    bounds: Dict[str, Tuple[float, float]] = Field(
        default_factory=lambda: {
            "n_avg": (0.0, 20.0),
            "t1qp": (0.1, 1.0e3),
            "t1r": (0.1, 1.0e4),
        }
    )
    max_iter: int = Field(default=200, ge=1)
    tol: float = 1e-12

    @field_validator("bounds")
    @classmethod
    def _check_bounds(cls, bounds: Dict[str, Tuple[float, float]]) -> Dict[str, Tuple[float, float]]:
        for name, (lower, upper) in bounds.items():
            if name not in ("n_avg", "t1qp", "t1r"):
                raise ValueError(f"unknown bound '{name}'")
            if not lower < upper:
                raise ValueError(f"bounds for {name}: lower must be < upper")
        return bounds

    @field_validator("tol")
    @classmethod
    def _tol_positive(cls, value: float) -> float:
        return _positive("tol", value)

    @field_validator("fix_t1r")
    @classmethod
    def _fix_positive(cls, value: Optional[float]) -> Optional[float]:
        if value is not None:
            _positive("fix_t1r", value)
        return value

    def bound(self, name: str) -> Tuple[float, float]:
        defaults = FitOptions.model_fields["bounds"].default_factory()
        return self.bounds.get(name, defaults[name])


class PulsesConfig(PulseSequence):
    """Sección `pulses`: secuencia base más las listas de barrido"""

    pulse_counts: Tuple[int, ...] = DEFAULT_PULSE_COUNTS
    recovery_delays: Tuple[float, ...] = DEFAULT_RECOVERY_DELAYS
    recovery_pulses: int = Field(default=20, ge=0)

    @field_validator("pulse_counts")
    @classmethod
    def _counts(cls, counts: Tuple[int, ...]) -> Tuple[int, ...]:
        if not counts or any(c < 0 for c in counts):
            raise ValueError("pulse_counts must be a non-empty list of non-negative integers")
        return counts

    @field_validator("recovery_delays")
    @classmethod
    def _delays(cls, delays: Tuple[float, ...]) -> Tuple[float, ...]:
        if any(d < 0 for d in delays) or any(b <= a for a, b in zip(delays, delays[1:])):
            raise ValueError("recovery_delays must be non-negative and strictly increasing")
        return delays

    def sequence(self, **update: Any) -> PulseSequence:
        base = {name: getattr(self, name) for name in PulseSequence.model_fields}
        base.update(update)
        return PulseSequence(**base)


class ThermalSettings(BaseModel):
    model_config = _FROZEN

    t1ne: float = 55.0
    temperatures: Tuple[float, ...] = DEFAULT_TEMPERATURES

    @field_validator("t1ne")
    @classmethod
    def _t1ne_positive(cls, value: float) -> float:
        return _positive("t1ne", value)

    @field_validator("temperatures")
    @classmethod
    def _temps(cls, temps: Tuple[float, ...]) -> Tuple[float, ...]:
        if not temps or any(not t > 0 for t in temps):
            raise ValueError("temperatures must be a non-empty list of positive values")
        return temps


class FluxSettings(BaseModel):
    model_config = _FROZEN

    t1qp0: float = 23.0
    grid: Tuple[float, ...] = DEFAULT_FLUX_GRID
    qp_distribution: QpDistribution = QpDistribution.TRAPPED

    @field_validator("t1qp0")
    @classmethod
    def _t1qp0_positive(cls, value: float) -> float:
        return _positive("t1qp0", value)


class SimSettings(BaseModel):
    """Sección `sim`"""

    model_config = _FROZEN

    decay: DecayParams = DecayParams(n_avg=2.5, t1qp=23.0, t1r=55.0)
    n_trials: int = Field(default=20000, ge=1)
    seed: int = Field(default=20160101, ge=0, lt=2**64)
    warmup_factor: float = Field(default=10.0, ge=10.0)
    qp_cap: int = Field(default=64, ge=1)
    repetitions: int = Field(default=10, ge=1)
    n_max: int = Field(default=200, ge=1)
    max_flag_fraction: float = Field(default=0.01, ge=0.0, le=1.0)
    thermal: ThermalSettings = ThermalSettings()
    flux: FluxSettings = FluxSettings()


class FitSettings(BaseModel):
    """Sección `fit`"""

    model_config = _FROZEN

    fix_t1r: Optional[float] = 55.0
    fix_n_avg: Optional[float] = None
    max_iter: int = Field(default=200, ge=1)
    tol: float = Field(default=1e-12, gt=0)
    normalize: bool = True
    bootstrap_resamples: int = Field(default=0, ge=0)

    @field_validator("bootstrap_resamples")
    @classmethod
    def _resamples(cls, value: int) -> int:
        if 0 < value < 100:
            raise ValueError("bootstrap_resamples must be 0 (off) or at least 100")
        return value

    def options(self, **update: Any) -> FitOptions:
        base = {
            "fix_t1r": self.fix_t1r,
            "fix_n_avg": self.fix_n_avg,
            "max_iter": self.max_iter,
            "tol": self.tol,
        }
        base.update(update)
        return FitOptions(**base)


def _default_device() -> DeviceParams:
    return DeviceParams(preset="deviceA")


def _default_bath() -> BathParams:
    return BathParams(gamma_in=1.0 / 150.0, gamma_out=1.0 / 300.0, delta_e=1.46)


class QPumpConfig(BaseModel):
    """Documento de configuración completo"""

    model_config = _FROZEN

    device: DeviceParams = Field(default_factory=_default_device)
    bath: BathParams = Field(default_factory=_default_bath)
    pulses: PulsesConfig = Field(default_factory=PulsesConfig)
    sim: SimSettings = Field(default_factory=SimSettings)
    fit: FitSettings = Field(default_factory=FitSettings)
