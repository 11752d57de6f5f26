"""
QPUMP - Experiments
Orquestación de los barridos: decaimiento simple, bombeo en N, temperatura,
flujo y recuperación. Cada barrido retorna tablas listas para CSV.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
import structlog

from qpump.core.error_handler import DomainError, QPumpError
from qpump.models.fitting import RecoveryFit, fit_decay, fit_exponential, trace_variability
from qpump.models.schemas import DecayTrace, QPumpConfig
from qpump.services.analytic import (
    ThermalModel,
    decay_curve,
    decay_population,
    t1qp_flux,
    thermal_rate,
    total_t1,
)
from qpump.services.montecarlo import ProtocolResult, recovery_experiment, run_protocol
from qpump.utils.io import trace_to_frame
from qpump.utils.rng import substream

logger = structlog.get_logger("QPUMP_EXPERIMENTS")

MODES = ("montecarlo", "analytic")


@dataclass
class SweepOutput:
    """Tabla principal, tablas secundarias y metadatos para el manifiesto"""

    table: pd.DataFrame
    extra_tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    n_trials: int = 0
    n_excluded: int = 0

    @property
    def excluded_fraction(self) -> float:
        return self.n_excluded / self.n_trials if self.n_trials else 0.0


def _protocol(config: QPumpConfig, seed: int, workers: int, **sequence_update: Any) -> ProtocolResult:
    sim = config.sim
    return run_protocol(
        config.pulses.sequence(**sequence_update),
        config.bath,
        sim.decay,
        config.device,
        n_trials=sim.n_trials,
        seed=seed,
        workers=workers,
        warmup_factor=sim.warmup_factor,
        qp_cap=sim.qp_cap,
        repetitions=sim.repetitions,
    )


def _prepare_for_fit(trace: DecayTrace, config: QPumpConfig) -> DecayTrace:
    return trace.normalized() if config.fit.normalize else trace


def simulate_decay(config: QPumpConfig, seed: int, workers: int = 1, mode: str = "montecarlo") -> SweepOutput:
    """Traza de decaimiento tras el protocolo configurado (Monte Carlo) o la ley cerrada"""
    if mode not in MODES:
        raise DomainError(f"unknown mode '{mode}' (expected one of {', '.join(MODES)})")

    if mode == "analytic":
        grid = np.asarray(config.pulses.readout_grid, dtype=float)
        populations = decay_population(grid, config.sim.decay)
        trace = DecayTrace(
            delays=tuple(float(t) for t in grid),
            populations=tuple(float(p) for p in np.atleast_1d(populations)),
        )
        return SweepOutput(table=trace_to_frame(trace), metadata={"mode": mode})

    result = _protocol(config, seed, workers)
    metadata = {"mode": mode, **result.metadata()}
    return SweepOutput(
        table=trace_to_frame(result.trace),
        metadata=metadata,
        warnings=list(result.warnings),
        n_trials=config.sim.n_trials,
        n_excluded=result.n_excluded,
    )


def pump_sweep(config: QPumpConfig, seed: int, workers: int = 1) -> SweepOutput:
    """Un protocolo por N en pulse_counts; resumen con ajustes de la ley de decaimiento"""
    options = config.fit.options()
    rows, traces, warnings = [], [], []
    intervals: Dict[str, List[float]] = {}
    n_excluded = 0

    # Misma semilla para todo N: los ensayos comparten calentamiento
    for n_pulses in config.pulses.pulse_counts:
        result = _protocol(config, seed, workers, n_pulses=n_pulses)
        n_excluded += result.n_excluded
        warnings.extend(w for w in result.warnings if w not in warnings)

        frame = trace_to_frame(result.trace)
        frame.insert(0, "n_pulses", n_pulses)
        traces.append(frame)
        intervals[str(n_pulses)] = [float(p) for p in result.interval_populations]

        row: Dict[str, Any] = {
            "N": n_pulses,
            "n_avg_fit": float("nan"),
            "n_avg_stderr": float("nan"),
            "t1qp_fit": float("nan"),
            "t1qp_stderr": float("nan"),
            "t1e_us": float("nan"),
            "fit_converged": False,
        }
        try:
            fit = fit_decay(_prepare_for_fit(result.trace, config), options)
            row.update(
                n_avg_fit=fit.params.n_avg,
                n_avg_stderr=fit.stderr.get("n_avg", float("nan")),
                t1qp_fit=fit.params.t1qp,
                t1qp_stderr=fit.stderr.get("t1qp", float("nan")),
                t1e_us=fit.t1e,
                fit_converged=fit.converged,
            )
        except (QPumpError, ValueError) as exc:
            warnings.append(f"N={n_pulses}: fit failed ({exc})")

        groups = np.array_split(np.arange(result.n_valid), result.per_trace_population.shape[0])
        variability = trace_variability(
            result.per_trace_population,
            result.trace.delays,
            [len(g) for g in groups],
            options,
            normalize=config.fit.normalize,
        )
        row.update(
            nqp_at_probe=result.nqp_at_probe,
            nqp_at_probe_stderr=result.nqp_at_probe_stderr,
            mean_energy_ghz=result.mean_energy_at_probe,
            mean_energy_stderr=result.energy_stderr,
            t1e_std_us=variability["t1e_std_us"],
            n_avg_std=variability["n_avg_std"],
            n_valid=result.n_valid,
            n_excluded=result.n_excluded,
        )
        rows.append(row)
        logger.info("pump_point_done", n_pulses=n_pulses, n_avg_fit=row["n_avg_fit"], t1e_us=row["t1e_us"])

    return SweepOutput(
        table=pd.DataFrame(rows),
        extra_tables={"traces": pd.concat(traces, ignore_index=True)},
        metadata={"pulse_counts": list(config.pulses.pulse_counts), "interval_populations": intervals},
        warnings=warnings,
        n_trials=config.sim.n_trials * len(config.pulses.pulse_counts),
        n_excluded=n_excluded,
    )


def temperature_sweep(config: QPumpConfig, seed: int, simulate_fit: bool = False) -> SweepOutput:
    """
    T1 total vs temperatura. Con simulate_fit, cada temperatura genera una traza
    binomial de la ley de decaimiento con 1/T1R = 1/T1,ne + 1/T1,th y la ajusta
    con una exponencial simple.
    """
    thermal = config.sim.thermal
    model = ThermalModel(t1ne=thermal.t1ne, device=config.device)
    omega = config.device.omega0
    grid = np.asarray(config.pulses.readout_grid, dtype=float)
    decay = config.sim.decay
    rows, warnings = [], []

    for index, temp in enumerate(thermal.temperatures):
        row: Dict[str, Any] = {
            "temp_K": float(temp),
            "t1_us": total_t1(temp, model, omega),
            "thermal_rate_per_us": thermal_rate(temp, config.device, omega),
        }
        if simulate_fit:
            t1r_eff = row["t1_us"]
            truth = decay_curve(grid, decay.n_avg, decay.t1qp, t1r_eff)
            rng = substream(seed, index, 0)
            counts = rng.binomial(config.sim.n_trials, truth)
            populations = counts / config.sim.n_trials
            stderr = np.sqrt(populations * (1.0 - populations) / config.sim.n_trials)
            trace = DecayTrace(
                delays=tuple(float(t) for t in grid),
                populations=tuple(float(p) for p in populations),
                stderr=tuple(float(s) for s in stderr),
                n_trials=config.sim.n_trials,
            )
            try:
                row["t1_fit_us"] = fit_exponential(trace).t1
            except QPumpError as exc:
                row["t1_fit_us"] = float("nan")
                warnings.append(f"T={temp:g} K: exponential fit failed ({exc})")
        rows.append(row)

    return SweepOutput(
        table=pd.DataFrame(rows),
        metadata={"t1ne_us": thermal.t1ne, "simulate_fit": simulate_fit},
        warnings=warnings,
    )


def flux_sweep(config: QPumpConfig) -> SweepOutput:
    """T̃1qp(f) y ω(f) sobre la grilla de flujo"""
    flux = config.sim.flux
    rows = []
    for f in flux.grid:
        point = t1qp_flux(float(f), flux.t1qp0, config.device, flux.qp_distribution)
        rows.append(
            {
                "f": point.f,
                "omega_ghz": point.omega_f,
                "t1qp_us": point.t1qp_f,
                "clamped": point.clamped,
            }
        )
    table = pd.DataFrame(rows)
    warnings = []
    if table["clamped"].any():
        warnings.append(f"{int(table['clamped'].sum())} flux points lie outside me_small_table and were clamped")
    return SweepOutput(
        table=table,
        metadata={"t1qp0_us": flux.t1qp0, "qp_distribution": flux.qp_distribution.value},
        warnings=warnings,
    )


def recovery_sweep(config: QPumpConfig, seed: int, workers: int = 1) -> SweepOutput:
    """Bombeo con recovery_pulses pulsos y retardo variable antes del pulso de prueba"""
    pulses = config.pulses
    sim = config.sim
    seq = pulses.sequence(n_pulses=pulses.recovery_pulses)
    result = recovery_experiment(
        seq,
        pulses.recovery_delays,
        config.bath,
        sim.decay,
        config.device,
        n_trials=sim.n_trials,
        seed=seed,
        fit_options=config.fit.options(),
        workers=workers,
        warmup_factor=sim.warmup_factor,
        qp_cap=sim.qp_cap,
        normalize=config.fit.normalize,
    )
    table = pd.DataFrame(
        {
            "probe_delay_us": result.probe_delays,
            "n_avg_fit": result.n_avg_fit,
            "n_avg_stderr": result.n_avg_fit_stderr,
            "t1qp_fit": [f.params.t1qp for f in result.fits],
            "n_direct": result.n_direct,
            "n_direct_stderr": result.n_direct_stderr,
        }
    )

    def describe(fit: Optional[RecoveryFit]) -> Optional[Dict[str, Any]]:
        return fit.to_dict() if fit is not None else None

    warnings: List[str] = []
    for r in result.results:
        warnings.extend(w for w in r.warnings if w not in warnings)
    return SweepOutput(
        table=table,
        metadata={
            "recovery_fit": describe(result.recovery_fit),
            "recovery_fit_direct": describe(result.recovery_fit_direct),
            "expected_time_constant_us": 1.0 / config.bath.gamma_out,
            "n_pulses": pulses.recovery_pulses,
        },
        warnings=warnings,
        n_trials=sim.n_trials * len(result.results),
        n_excluded=sum(r.n_excluded for r in result.results),
    )
