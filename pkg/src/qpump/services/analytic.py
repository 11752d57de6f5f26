"""
QPUMP - Analytic formulas
Ley de decaimiento no exponencial, estado estacionario de Poisson, recuperación
de ⟨n_qp⟩, relajación térmica y dependencia en flujo
"""

import math
from dataclasses import dataclass
from typing import Callable, Tuple, Union

import numpy as np
from scipy import integrate, optimize, special, stats

from qpump.core.constants import CONSTANTS
from qpump.core.error_handler import DomainError
from qpump.models.schemas import BathParams, DecayParams, DeviceParams, QpDistribution

ArrayLike = Union[float, np.ndarray]

TAIL_MASS_LIMIT = 1e-12


@dataclass(frozen=True)
class ThermalModel:
    """Separación 1/T1 = 1/T1,ne + 1/T1,th"""

    t1ne: float
    device: DeviceParams

    def __post_init__(self):
        if not self.t1ne > 0:
            raise DomainError("t1ne must be positive")


@dataclass(frozen=True)
class FluxPoint:
    f: float
    omega_f: float
    t1qp_f: float
    clamped: bool = False


@dataclass(frozen=True)
class PoissonSteadyState:
    probs: np.ndarray
    mean: float
    tail_mass: float


# ---------------------------------------------------------------------------
# Densidad de estados
# ---------------------------------------------------------------------------

def nu(energy: float, gap: float) -> float:
    """Densidad de estados BCS normalizada ε/√(ε²−Δ²)"""
    if not energy > gap:
        raise DomainError(f"nu diverges at or below the gap (energy={energy}, gap={gap})")
    excess = energy - gap
    # √(ε²−Δ²) = √(x(2Δ+x)) evita la cancelación cerca del borde
    return energy / math.sqrt(excess * (2.0 * gap + excess))


def nu_excess(excess: ArrayLike, gap: float) -> ArrayLike:
    """ν en función de la energía sobre el gap; vectorizado, excess > 0"""
    x = np.asarray(excess, dtype=float)
    return (gap + x) / np.sqrt(x * (2.0 * gap + x))


# ---------------------------------------------------------------------------
# Ley de decaimiento
# ---------------------------------------------------------------------------

def decay_curve(t: ArrayLike, n_avg: float, t1qp: float, t1r: float) -> ArrayLike:
    """p(t) = exp(⟨n⟩(e^{−t/T̃1qp} − 1))·e^{−t/T1R}, sin validación (uso interno del ajuste)"""
    t = np.asarray(t, dtype=float)
    return np.exp(n_avg * np.expm1(-t / t1qp) - t / t1r)


def decay_population(t: ArrayLike, p: DecayParams) -> ArrayLike:
    """Población excitada tras un pulso π con ⟨n_qp⟩ Poisson"""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise DomainError("decay_population requires t >= 0")
    value = decay_curve(t_arr, p.n_avg, p.t1qp, p.t1r)
    return float(value) if np.ndim(value) == 0 else value


def one_over_e_time(p: DecayParams) -> float:
    """T1/e: tiempo en que el decaimiento cae a 1/e"""
    target = math.exp(-1.0)
    upper = 20.0 * max(p.t1qp, p.t1r)

    def excess(t: float) -> float:
        return float(decay_curve(t, p.n_avg, p.t1qp, p.t1r)) - target

    return optimize.brentq(excess, 0.0, upper, xtol=1e-9, rtol=4 * np.finfo(float).eps, maxiter=500)


# ---------------------------------------------------------------------------
# Baño de cuasipartículas
# ---------------------------------------------------------------------------

def poisson_steady(gamma_in: float, gamma_out: float, n_max: int = 200) -> PoissonSteadyState:
    """Distribución estacionaria Poisson(Γin/Γout) truncada en n_max"""
    if not gamma_out > 0:
        raise DomainError("gamma_out must be positive for a steady state to exist")
    if gamma_in < 0:
        raise DomainError("gamma_in must be non-negative")
    mean = gamma_in / gamma_out
    n = np.arange(n_max + 1)
    probs = stats.poisson.pmf(n, mean) if mean > 0 else (n == 0).astype(float)
    tail = float(stats.poisson.sf(n_max, mean)) if mean > 0 else 0.0
    if tail >= TAIL_MASS_LIMIT:
        raise DomainError(f"n_max={n_max} truncates {tail:.3e} of the Poisson({mean:g}) mass")
    probs = probs / probs.sum()
    return PoissonSteadyState(probs=probs, mean=mean, tail_mass=tail)


def mean_nqp(t: ArrayLike, n0: float, gamma_in: float, gamma_out: float) -> ArrayLike:
    """⟨n⟩(t) = ⟨n⟩(0)e^{−Γout t} + ⟨n⟩s(1 − e^{−Γout t})"""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise DomainError("mean_nqp requires t >= 0")
    decay = np.exp(-gamma_out * t_arr)
    steady = gamma_in / gamma_out if gamma_out > 0 else 0.0
    if gamma_out > 0:
        value = n0 * decay + steady * (-np.expm1(-gamma_out * t_arr))
    else:
        value = n0 + gamma_in * t_arr
    return float(value) if np.ndim(value) == 0 else value


def resolved_steady_mean(bath: BathParams, device: DeviceParams) -> float:
    """
    ⟨n⟩ estacionario con tasas de salida dependientes de la energía:
    (Γin/Γout)·E[ν(Δ+ε)]/ν(Δ+δE), ε ~ Exp(δE). Sin resolución en energía es Γin/Γout.
    """
    if not bath.energy_resolved:
        return bath.steady_mean
    gap, de = device.gap, bath.delta_e
    anchor = nu(gap + de, gap)

    # Sustitución ε = u² absorbe la singularidad integrable ε^{-1/2}
    def integrand(u: float) -> float:
        eps = u * u
        return 2.0 * u * float(nu_excess(eps, gap)) * math.exp(-eps / de) / de

    expected_nu, _ = integrate.quad(integrand, 0.0, np.inf, epsabs=0.0, epsrel=1e-10, limit=200)
    return bath.steady_mean * expected_nu / anchor


def energy_estimate(n_before: float, n_after: float, gap: float) -> float:
    """δE = Δ / (2·(n_before/n_after)²)"""
    if not n_after > 0:
        raise DomainError("n_after must be positive")
    if n_before < n_after:
        raise DomainError("n_before must be at least n_after")
    ratio = n_before / n_after
    return gap / (2.0 * ratio * ratio)


def xqp_upper_bound(n_avg: float, n_cooper_pairs: float) -> float:
    """Densidad normalizada x_qp: cuasipartículas por par de Cooper"""
    if not n_cooper_pairs > 0:
        raise DomainError("n_cooper_pairs must be positive")
    return n_avg / n_cooper_pairs


# ---------------------------------------------------------------------------
# Relajación térmica
# ---------------------------------------------------------------------------

def bessel_k0(x: ArrayLike) -> ArrayLike:
    """Función de Bessel modificada de segunda especie K0"""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr <= 0):
        raise DomainError("bessel_k0 requires x > 0")
    value = special.k0(x_arr)
    return float(value) if np.ndim(value) == 0 else value


def bessel_k0e(x: ArrayLike) -> ArrayLike:
    """e^x·K0(x), estable para x grande"""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr <= 0):
        raise DomainError("bessel_k0e requires x > 0")
    value = special.k0e(x_arr)
    return float(value) if np.ndim(value) == 0 else value


def log_thermal_rate(
    temp: float,
    device: DeviceParams,
    omega: float,
    k0e: Callable[[float], float] = bessel_k0e,
) -> float:
    """ln(1/T1,th); exponentes sumados antes de exponenciar"""
    if not temp > 0:
        raise DomainError("temperature must be positive")
    kt = CONSTANTS.kb_over_h * temp
    x = omega / (2.0 * kt)
    prefactor = 16.0 / math.pi * CONSTANTS.rate_scale * device.ej_large  # = 32·EJ·10³ μs⁻¹
    if device.me_large == 0.0:
        return -math.inf
    # e^{x}K0(x) = k0e(x)
    return (
        math.log(prefactor)
        - device.gap / kt
        + math.log(k0e(x))
        + math.log1p(math.exp(-2.0 * x))
        + 2.0 * math.log(device.me_large)
    )


def thermal_rate(temp: float, device: DeviceParams, omega: float) -> float:
    """1/T1,th por cuasipartículas térmicas, en μs⁻¹"""
    return math.exp(log_thermal_rate(temp, device, omega))


def total_t1(temp: float, model: ThermalModel, omega: float) -> float:
    """1/T1 = 1/T1,ne + 1/T1,th"""
    return 1.0 / (1.0 / model.t1ne + thermal_rate(temp, model.device, omega))


# ---------------------------------------------------------------------------
# Dependencia en flujo
# ---------------------------------------------------------------------------

def qubit_freq(f: ArrayLike, device: DeviceParams) -> ArrayLike:
    """ω(f) = √(ω0² + (2IpΦ0 f)²), en GHz"""
    value = np.hypot(device.omega0, device.eps_slope * np.asarray(f, dtype=float))
    return float(value) if np.ndim(value) == 0 else value


def me_small(f: float, device: DeviceParams) -> Tuple[float, bool]:
    """Elemento de matriz de la juntura pequeña, interpolación lineal con recorte en los extremos"""
    table = np.asarray(device.me_small_table, dtype=float)
    fluxes, values = table[:, 0], table[:, 1]
    # Tabla solo en f ≥ 0: se usa la simetría par
    x = abs(f) if fluxes[0] >= 0.0 else f
    clamped = bool(x < fluxes[0] or x > fluxes[-1])
    return float(np.interp(x, fluxes, values)), clamped


def flux_factor(f: float, device: DeviceParams, distribution: QpDistribution = QpDistribution.TRAPPED) -> Tuple[float, bool]:
    """T̃1qp(0)/T̃1qp(f) = √(ω0/ω(f))·(1 + α·|ME_s(f)|²/(k·|ME_L|²))"""
    me_s, clamped = me_small(f, device)
    weight = 3.0 if distribution == QpDistribution.UNIFORM else 1.0
    if device.me_large > 0:
        bracket = 1.0 + device.alpha * me_s * me_s / (weight * device.me_large * device.me_large)
    else:
        bracket = 1.0
    return math.sqrt(device.omega0 / qubit_freq(f, device)) * bracket, clamped


def t1qp_flux(
    f: float,
    t1qp0: float,
    device: DeviceParams,
    distribution: QpDistribution = QpDistribution.TRAPPED,
) -> FluxPoint:
    """T̃1qp(f) a partir de T̃1qp(0)"""
    if not t1qp0 > 0:
        raise DomainError("t1qp0 must be positive")
    factor, clamped = flux_factor(f, device, distribution)
    return FluxPoint(f=f, omega_f=qubit_freq(f, device), t1qp_f=t1qp0 / factor, clamped=clamped)
