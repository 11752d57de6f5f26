"""
QPUMP - Validation Suite
Verificaciones cruzadas entre módulos: identidad de la mezcla de Poisson,
estado estacionario de la ecuación maestra, Monte Carlo contra oráculos,
precisión de K0, meseta térmica, identidad de flujo y ajuste de ida y vuelta.
"""

import math
import time
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np
import pandas as pd
import structlog
from scipy import integrate, stats

from qpump.models.fitting import fit_decay
from qpump.models.schemas import BathParams, DecayParams, DecayTrace, DeviceParams, FitOptions, PulseSequence
from qpump.services import master_equation as meq
from qpump.services.analytic import (
    ThermalModel,
    bessel_k0e,
    decay_curve,
    decay_population,
    me_small,
    mean_nqp,
    poisson_steady,
    qubit_freq,
    t1qp_flux,
    total_t1,
)
from qpump.services.montecarlo import run_protocol
from qpump.utils.rng import substream

logger = structlog.get_logger("QPUMP_VALIDATION")

REFERENCE_DECAY = DecayParams(n_avg=2.5, t1qp=23.0, t1r=55.0)
READOUT_GRID = tuple(float(t) for t in np.arange(0.0, 150.0, 5.0))


@dataclass
class CheckResult:
    name: str
    passed: bool
    metric: float
    threshold: float
    detail: str
    elapsed_s: float = 0.0


def _timed(func: Callable[[], CheckResult]) -> CheckResult:
    start = time.perf_counter()
    result = func()
    result.elapsed_s = time.perf_counter() - start
    return result


def check_mixture_identity(seed: int = 1, n_random: int = 20) -> CheckResult:
    """Σ P(n)e^{−nt/T̃1qp}e^{−t/T1R} con P Poisson coincide con la forma cerrada"""
    rng = substream(seed, 0, 0)
    sets = [REFERENCE_DECAY] + [
        DecayParams(
            n_avg=float(rng.uniform(0.0, 5.0)),
            t1qp=float(rng.uniform(5.0, 50.0)),
            t1r=float(rng.uniform(20.0, 100.0)),
        )
        for _ in range(n_random)
    ]
    t = np.linspace(0.0, 200.0, 1000)
    worst = 0.0
    for params in sets:
        steady = poisson_steady(params.n_avg, 1.0, n_max=200)
        n = np.arange(steady.probs.size)[:, None]
        mixture = steady.probs @ np.exp(-n * t[None, :] / params.t1qp) * np.exp(-t / params.t1r)
        worst = max(worst, float(np.max(np.abs(mixture - decay_population(t, params)))))
    return CheckResult("mixture_identity", worst < 1e-12, worst, 1e-12, f"{len(sets)} parameter sets x 1000 times")


def check_master_equation(seed: int = 2, n_pairs: int = 10, n_max: int = 60) -> CheckResult:
    """Desde δ_{n,0}: distancia TV a Poisson tras 20/Γout y ⟨n⟩(t) contra la forma cerrada"""
    rng = substream(seed, 0, 0)
    worst_tv, worst_mean = 0.0, 0.0
    for _ in range(n_pairs):
        gamma_out = float(rng.uniform(1.0 / 1000.0, 1.0 / 100.0))
        gamma_in = gamma_out * float(rng.uniform(0.5, 5.0))
        bath = BathParams(gamma_in=gamma_in, gamma_out=gamma_out, delta_e=1.46, energy_resolved=False)
        dist = meq.steady_state(bath, n_max=n_max)
        target = meq.NumberDistribution(probs=poisson_steady(gamma_in, gamma_out, n_max=n_max).probs)
        worst_tv = max(worst_tv, dist.total_variation(target))

        start = meq.NumberDistribution.point_mass(0, n_max)
        times = np.linspace(0.0, 5.0 / gamma_out, 25)
        trajectory = meq.mean_trajectory(start, gamma_in, gamma_out, times)
        worst_mean = max(worst_mean, float(np.max(np.abs(trajectory - mean_nqp(times, 0.0, gamma_in, gamma_out)))))
    passed = worst_tv < 1e-6 and worst_mean < 1e-7
    return CheckResult(
        "master_equation",
        passed,
        max(worst_tv, worst_mean),
        1e-6,
        f"TV={worst_tv:.2e}, mean error={worst_mean:.2e} over {n_pairs} rate pairs",
    )


def _pointwise_agreement(observed: np.ndarray, expected: np.ndarray, n_trials: int, n_se: float) -> tuple:
    """z por punto con el error binomial del valor esperado; todos los puntos dentro de n_se"""
    sigma = np.sqrt(np.clip(expected * (1.0 - expected), 1e-12, None) / n_trials)
    z = np.abs(observed - expected) / sigma
    return bool(z.max() <= n_se), float(z.max()), int(np.count_nonzero(z > n_se))


def check_montecarlo_frozen_bath(device: DeviceParams, n_trials: int, seed: int, n_se: float, workers: int = 1) -> CheckResult:
    """Baño lento: la población tras un pulso π sigue la ley de decaimiento cerrada"""
    gamma_out = 1.0 / 30000.0
    bath = BathParams(gamma_in=REFERENCE_DECAY.n_avg * gamma_out, gamma_out=gamma_out, delta_e=1.46, energy_resolved=False)
    seq = PulseSequence(readout_grid=READOUT_GRID)
    result = run_protocol(seq, bath, REFERENCE_DECAY, device, n_trials=n_trials, seed=seed, workers=workers)
    expected = decay_population(result.trace.t, REFERENCE_DECAY)
    passed, z_max, outside = _pointwise_agreement(result.trace.p, expected, result.n_valid, n_se)
    detail = f"{result.n_valid} trials, slow bath, {outside} of {expected.size} points beyond {n_se:g} SE"
    return CheckResult("montecarlo_vs_decay_law", passed, z_max, n_se, detail)


def check_montecarlo_dynamic_bath(device: DeviceParams, n_trials: int, seed: int, n_se: float, workers: int = 1) -> CheckResult:
    """Tasas por defecto: la población sigue el oráculo de supervivencia de la ecuación maestra"""
    bath = BathParams(gamma_in=1.0 / 120.0, gamma_out=1.0 / 300.0, delta_e=1.46, energy_resolved=False)
    seq = PulseSequence(readout_grid=READOUT_GRID)
    result = run_protocol(seq, bath, REFERENCE_DECAY, device, n_trials=n_trials, seed=seed + 1, workers=workers)
    start = meq.NumberDistribution(probs=poisson_steady(bath.gamma_in, bath.gamma_out, n_max=80).probs)
    expected = meq.survival_oracle(start, bath, REFERENCE_DECAY, READOUT_GRID)
    passed, z_max, outside = _pointwise_agreement(result.trace.p, expected, result.n_valid, n_se)
    detail = f"{result.n_valid} trials, default rates, {outside} of {expected.size} points beyond {n_se:g} SE"
    return CheckResult("montecarlo_vs_master_equation", passed, z_max, n_se, detail)


def check_two_pi_control(
    device: DeviceParams, n_trials: int, seed: int, n_se: float, workers: int = 1, alpha: float = 1e-3
) -> CheckResult:
    """Diez pulsos 2π no cambian la estadística de lectura respecto de N=0 (KS y punto a punto)"""
    bath = BathParams(gamma_in=1.0 / 150.0, gamma_out=1.0 / 300.0, delta_e=1.46, energy_resolved=True)
    reference = run_protocol(
        PulseSequence(readout_grid=READOUT_GRID),
        bath,
        REFERENCE_DECAY,
        device,
        n_trials=n_trials,
        seed=seed + 2,
        workers=workers,
    )
    control = run_protocol(
        PulseSequence(n_pulses=10, theta=2.0 * math.pi, readout_grid=READOUT_GRID),
        bath,
        REFERENCE_DECAY,
        device,
        n_trials=n_trials,
        seed=seed + 3,
        workers=workers,
    )
    sigma = np.sqrt(np.clip(reference.trace.sigma**2 + control.trace.sigma**2, 1e-24, None))
    z = np.abs(reference.trace.p - control.trace.p) / sigma
    outside = int(np.count_nonzero(z > n_se))

    statistic = float(stats.ks_2samp(reference.readout_counts, control.readout_counts).statistic)
    n, m = reference.n_valid, control.n_valid
    critical = math.sqrt(-0.5 * math.log(alpha / 2.0)) * math.sqrt((n + m) / (n * m))
    passed = statistic < critical and outside == 0
    detail = f"KS D={statistic:.4f} (alpha {alpha:g}), {outside} of {z.size} points beyond {n_se:g} SE"
    return CheckResult("two_pi_control", passed, statistic, critical, detail)


def _k0e_quadrature(x: float) -> float:
    """e^x·K0(x) = ∫₀^∞ e^{−x(cosh u − 1)} du"""
    # Más allá de `upper` el integrando es menor que e^{-745}
    upper = math.acosh(1.0 + 745.0 / x)
    value, _ = integrate.quad(
        lambda u: math.exp(-x * (math.cosh(u) - 1.0)), 0.0, upper, epsabs=0.0, epsrel=1e-13, limit=400
    )
    return value


def check_bessel_k0(k0e: Callable[[float], float] = bessel_k0e, n_points: int = 60) -> CheckResult:
    """K0 contra cuadratura sobre [0.05, 30]"""
    worst = 0.0
    for x in np.geomspace(0.05, 30.0, n_points):
        reference = _k0e_quadrature(float(x))
        worst = max(worst, abs(float(k0e(float(x))) - reference) / reference)
    return CheckResult("bessel_k0", worst < 1e-10, worst, 1e-10, f"{n_points} points on [0.05, 30]")


def check_thermal_plateau(device: DeviceParams, t1ne: float = 55.0) -> CheckResult:
    model = ThermalModel(t1ne=t1ne, device=device)
    temps = np.arange(0.02, 0.3501, 0.005)
    t1 = np.array([total_t1(float(temp), model, device.omega0) for temp in temps])
    plateau = t1[temps <= 0.1 + 1e-12]
    deviation = float(np.max(np.abs(plateau - t1ne)) / t1ne)
    monotone = bool(np.all(np.diff(t1) <= 1e-12 * t1ne))
    return CheckResult(
        "thermal_plateau",
        deviation < 0.01 and monotone,
        deviation,
        0.01,
        f"plateau deviation {deviation:.2e}, monotone={monotone}",
    )


def check_flux_identity(device: DeviceParams, t1qp0: float = 23.0, n_points: int = 50) -> CheckResult:
    table_max = device.me_small_table[-1][0]
    worst = 0.0
    for f in np.linspace(-table_max, table_max, n_points):
        point = t1qp_flux(float(f), t1qp0, device)
        me_s, _ = me_small(float(f), device)
        closed = math.sqrt(device.omega0 / qubit_freq(float(f), device)) * (
            1.0 + device.alpha * me_s**2 / device.me_large**2
        )
        worst = max(worst, abs(t1qp0 / point.t1qp_f - closed) / closed)
    at_zero = abs(t1qp_flux(0.0, t1qp0, device).t1qp_f - t1qp0)
    return CheckResult(
        "flux_identity",
        worst < 1e-12 and at_zero < 1e-12,
        worst,
        1e-12,
        f"{n_points} flux points, |T(0) - {t1qp0:g}| = {at_zero:.1e}",
    )


def check_fit_roundtrip() -> CheckResult:
    """Trazas sin ruido sobre la grilla de 36 parámetros se recuperan al 1%"""
    worst = 0.0
    t = np.asarray(READOUT_GRID)
    for n_avg in (0.5, 1.0, 2.5, 4.0):
        for t1qp in (7.0, 20.0, 30.0):
            for t1r in (40.0, 55.0, 80.0):
                trace = DecayTrace(
                    delays=READOUT_GRID,
                    populations=tuple(float(p) for p in decay_curve(t, n_avg, t1qp, t1r)),
                )
                fit = fit_decay(trace, FitOptions())
                truth = (n_avg, t1qp, t1r)
                got = (fit.params.n_avg, fit.params.t1qp, fit.params.t1r)
                worst = max(worst, max(abs(g - e) / e for g, e in zip(got, truth)))
    return CheckResult("fit_roundtrip", worst < 0.01, worst, 0.01, "36 noiseless parameter sets")


def run_suite(
    device: Optional[DeviceParams] = None,
    quick: bool = False,
    seed: int = 20160101,
    workers: int = 1,
    n_trials: int = 100_000,
) -> List[CheckResult]:
    """Corre todas las verificaciones; --quick divide los ensayos por 10 y usa 5 SE"""
    device = device or DeviceParams(preset="deviceA")
    trials = max(n_trials // 10, 1) if quick else n_trials
    n_se = 5.0 if quick else 3.0

    checks: List[Callable[[], CheckResult]] = [
        check_mixture_identity,
        check_master_equation,
        lambda: check_montecarlo_frozen_bath(device, trials, seed, n_se, workers),
        lambda: check_montecarlo_dynamic_bath(device, trials, seed, n_se, workers),
        lambda: check_two_pi_control(device, trials, seed, n_se, workers),
        check_bessel_k0,
        lambda: check_thermal_plateau(device),
        lambda: check_flux_identity(device),
        check_fit_roundtrip,
    ]
    results = []
    for check in checks:
        result = _timed(check)
        logger.info("check_finished", check=result.name, passed=result.passed, elapsed_s=round(result.elapsed_s, 3))
        results.append(result)
    return results


def results_table(results: List[CheckResult]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "check": r.name,
                "status": "PASS" if r.passed else "FAIL",
                "metric": r.metric,
                "threshold": r.threshold,
                "elapsed_s": round(r.elapsed_s, 3),
                "detail": r.detail,
            }
            for r in results
        ]
    )
