"""
QPUMP - Master Equation
Integración determinista de la ecuación maestra de nacimiento-muerte P(n,t),
usada como oráculo numérico del Monte Carlo y de las fórmulas analíticas
"""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import structlog
from scipy import sparse
from scipy.integrate import solve_ivp

from qpump.core.error_handler import DomainError, QPumpError
from qpump.models.schemas import BathParams, DecayParams

logger = structlog.get_logger("QPUMP_MASTER_EQ")

CONSERVATION_TOL = 1e-9
NEGATIVE_CLAMP = 1e-12
MAX_HALVINGS = 8


@dataclass(frozen=True)
class NumberDistribution:
    """Distribución del número de cuasipartículas sobre n = 0..n_max"""

    probs: np.ndarray
    time: float = 0.0
    leak: float = field(default=0.0, compare=False)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size == 0:
            raise DomainError("probs must be a non-empty vector")
        if np.any(probs < -NEGATIVE_CLAMP):
            raise DomainError("probabilities must be non-negative")
        if abs(probs.sum() - 1.0) > CONSERVATION_TOL:
            raise DomainError(f"probabilities sum to {probs.sum():.12f}, not 1")
        object.__setattr__(self, "probs", np.clip(probs, 0.0, None))

    @property
    def n_max(self) -> int:
        return self.probs.size - 1

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(self.probs.size), self.probs))

    @classmethod
    def point_mass(cls, n: int, n_max: int = 200) -> "NumberDistribution":
        probs = np.zeros(n_max + 1)
        probs[n] = 1.0
        return cls(probs=probs)

    def total_variation(self, other: "NumberDistribution") -> float:
        size = max(self.probs.size, other.probs.size)
        a = np.pad(self.probs, (0, size - self.probs.size))
        b = np.pad(other.probs, (0, size - other.probs.size))
        return 0.5 * float(np.abs(a - b).sum())


def generator(n_max: int, gamma_in: float, gamma_out: float) -> sparse.csr_matrix:
    """
    Generador tridiagonal L con dP/dt = L·P. Frontera reflectante en n_max:
    el flujo Γin fuera de n_max se descarta, de modo que cada columna suma cero.
    """
    n = np.arange(n_max + 1, dtype=float)
    births = np.full(n_max + 1, gamma_in)
    births[-1] = 0.0
    deaths = n * gamma_out
    diagonal = -(births + deaths)
    return sparse.diags(
        [births[:-1], diagonal, deaths[1:]],
        offsets=[-1, 0, 1],
        format="csr",
    )


def _integrate(matrix: sparse.csr_matrix, p0: np.ndarray, times: np.ndarray, max_step: float):
    return solve_ivp(
        lambda _t, y: matrix @ y,
        (0.0, float(times[-1])),
        p0,
        method="DOP853",
        t_eval=times,
        max_step=max_step,
        rtol=1e-11,
        atol=1e-15,
    )


def evolve(
    p0: NumberDistribution,
    gamma_in: float,
    gamma_out: float,
    t: float,
    dt_max: float = 10.0,
) -> NumberDistribution:
    """Evoluciona P(n) un tiempo t con tasas constantes"""
    if t < 0:
        raise DomainError("evolve requires t >= 0")
    if gamma_in < 0 or gamma_out < 0:
        raise DomainError("rates must be non-negative")
    if t == 0 or (gamma_in == 0 and gamma_out == 0):
        return NumberDistribution(probs=p0.probs.copy(), time=p0.time + t)

    matrix = generator(p0.n_max, gamma_in, gamma_out)
    max_step = dt_max
    times = np.array([0.0, t])

    # Paso reducido a la mitad mientras se viole la conservación
    for attempt in range(MAX_HALVINGS + 1):
        solution = _integrate(matrix, p0.probs, times, max_step)
        if solution.success:
            probs = solution.y[:, -1]
            drift = abs(probs.sum() - 1.0)
            if drift <= CONSERVATION_TOL and probs.min() >= -NEGATIVE_CLAMP:
                break
        logger.debug("step_halved", attempt=attempt, max_step=max_step)
        max_step /= 2.0
    else:
        raise QPumpError("master equation integration failed to conserve probability")

    # Masa que alcanzó n_max: indicador de truncamiento
    leak = float(probs[-1])
    probs = np.clip(probs, 0.0, None)
    probs /= probs.sum()
    return NumberDistribution(probs=probs, time=p0.time + t, leak=leak)


def decay_oracle(dist: NumberDistribution, p: DecayParams, t: float) -> float:
    """Σ_n P(n)·e^{−n t/T̃1qp}·e^{−t/T1R}"""
    if t < 0:
        raise DomainError("decay_oracle requires t >= 0")
    n = np.arange(dist.probs.size)
    return float(np.dot(dist.probs, np.exp(-n * t / p.t1qp)) * np.exp(-t / p.t1r))


def survival_oracle(
    dist: NumberDistribution,
    bath: BathParams,
    decay: DecayParams,
    times: Sequence[float],
    dt_max: float = 10.0,
) -> np.ndarray:
    """
    Población excitada con el baño evolucionando durante el decaimiento.
    Resuelve dQ/dt = (L − diag(n/T̃1qp + 1/T1R))·Q con Q(n,0) = P(n); la población es ΣQ.
    Exacto para el modelo de Monte Carlo sin resolución en energía.
    """
    grid = np.asarray(times, dtype=float)
    if grid.size == 0 or np.any(grid < 0) or np.any(np.diff(grid) <= 0):
        raise DomainError("times must be non-negative and strictly increasing")

    n = np.arange(dist.probs.size, dtype=float)
    killing = sparse.diags(n / decay.t1qp + 1.0 / decay.t1r, format="csr")
    matrix = (generator(dist.n_max, bath.gamma_in, bath.gamma_out) - killing).tocsr()

    if grid[-1] == 0.0:
        return np.ones(grid.size)
    solution = _integrate(matrix, dist.probs, grid, dt_max)
    if not solution.success:
        raise QPumpError(f"survival integration failed: {solution.message}")
    return np.clip(solution.y.sum(axis=0), 0.0, 1.0)


def steady_state(bath: BathParams, n_max: int = 200, horizon_factor: float = 20.0) -> NumberDistribution:
    """Evoluciona δ_{n,0} durante horizon_factor/Γout"""
    start = NumberDistribution.point_mass(0, n_max)
    return evolve(start, bath.gamma_in, bath.gamma_out, horizon_factor / bath.gamma_out)


def mean_trajectory(
    p0: NumberDistribution,
    gamma_in: float,
    gamma_out: float,
    times: Sequence[float],
) -> np.ndarray:
    """⟨n⟩ en cada tiempo de la grilla (una sola integración)"""
    grid = np.asarray(times, dtype=float)
    if gamma_in == 0 and gamma_out == 0:
        return np.full(grid.size, p0.mean)
    matrix = generator(p0.n_max, gamma_in, gamma_out)
    padded = grid[0] > 0
    solution = _integrate(matrix, p0.probs, np.concatenate(([0.0], grid)) if padded else grid, 10.0)
    if not solution.success:
        raise QPumpError(f"mean trajectory integration failed: {solution.message}")
    values = np.arange(p0.probs.size) @ solution.y
    return values[1:] if padded else values
