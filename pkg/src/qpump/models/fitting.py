"""
QPUMP - Fitting
Ajuste por mínimos cuadrados ponderados de la ley de decaimiento, exponencial
simple, recuperación de ⟨n_qp⟩, bootstrap de residuos y variabilidad entre trazas
"""

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from scipy import optimize

from qpump.core.error_handler import DomainError, FitConvergenceError, InputError, QPumpError
from qpump.models.schemas import DecayParams, DecayTrace, FitOptions
from qpump.services.analytic import decay_curve, one_over_e_time
from qpump.utils.rng import substream

logger = structlog.get_logger("QPUMP_FITTING")

PARAM_NAMES = ("n_avg", "t1qp", "t1r")
WEIGHT_FLOOR = 1e-3
DEGENERATE_SPAN = 1e-12
MAX_BOOTSTRAP_FAILURE = 0.2


@dataclass
class FitResult:
    """Resultado de fit_decay; la covarianza cubre solo los parámetros libres"""

    params: DecayParams
    residual_norm: float
    covariance: np.ndarray
    stderr: Dict[str, float]
    n_iter: int
    converged: bool
    free: Tuple[str, ...] = PARAM_NAMES

    @property
    def t1e(self) -> float:
        return one_over_e_time(self.params)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "params": self.params.model_dump(),
            "stderr": dict(self.stderr),
            "free_parameters": list(self.free),
            "covariance": self.covariance.tolist(),
            "residual_norm": self.residual_norm,
            "n_iter": self.n_iter,
            "converged": self.converged,
            "t1e_us": self.t1e,
        }


@dataclass
class ExponentialFit:
    t1: float
    amplitude: float
    offset: float
    residual_norm: float
    converged: bool


@dataclass
class RecoveryFit:
    gamma_out: float
    n_steady: float
    n0: float
    converged: bool
    stderr: Dict[str, float] = field(default_factory=dict)

    @property
    def time_constant(self) -> float:
        return 1.0 / self.gamma_out if self.gamma_out > 0 else math.inf

    def to_dict(self) -> Dict[str, Any]:
        return {
            "gamma_out": self.gamma_out,
            "time_constant_us": self.time_constant,
            "n_steady": self.n_steady,
            "n0": self.n0,
            "converged": self.converged,
            "stderr": dict(self.stderr),
        }


@dataclass
class BootstrapResult:
    std: Dict[str, float]
    samples: np.ndarray
    n_failed: int


# ---------------------------------------------------------------------------
# Utilidades
# ---------------------------------------------------------------------------

def _weights(trace: DecayTrace) -> np.ndarray:
    sigma = trace.sigma
    if sigma is None:
        return np.ones(len(trace.delays))
    return 1.0 / np.maximum(sigma, WEIGHT_FLOOR)


def _log_linear(t: np.ndarray, p: np.ndarray) -> Optional[Tuple[float, float]]:
    """Pendiente e intercepto de ln p; None si no hay puntos positivos suficientes"""
    mask = p > 0
    if mask.sum() < 2:
        return None
    slope, intercept = np.polyfit(t[mask], np.log(p[mask]), 1)
    return float(slope), float(intercept)


def decay_jacobian(t: np.ndarray, n_avg: float, t1qp: float, t1r: float) -> np.ndarray:
    """∂p/∂(n_avg, t1qp, t1r), columnas en el orden de PARAM_NAMES"""
    t = np.asarray(t, dtype=float)
    p = decay_curve(t, n_avg, t1qp, t1r)
    fast = np.exp(-t / t1qp)
    return np.column_stack(
        [
            p * (fast - 1.0),
            p * n_avg * fast * t / (t1qp * t1qp),
            p * t / (t1r * t1r),
        ]
    )


def initial_guess(trace: DecayTrace, opts: FitOptions) -> DecayParams:
    """
    Estimación cerrada y determinista:
    t1r del ajuste log-lineal del último 20% de la traza, n_avg de su intercepto
    extrapolado, t1qp de la pendiente del primer 20% menos 1/t1r.
    """
    t, p = trace.t, trace.p
    size = max(2, int(math.ceil(0.2 * t.size)))

    lo, hi = opts.bound("t1r")
    t1r = min(max(0.5 * (t[-1] - t[0]) + 1.0, lo), hi)
    n_avg = 1.0
    tail = _log_linear(t[-size:], p[-size:])
    if tail is not None and tail[0] < 0:
        t1r = -1.0 / tail[0]
        n_avg = -tail[1]
    if opts.fix_t1r is not None:
        t1r = opts.fix_t1r
    if opts.fix_n_avg is not None:
        n_avg = opts.fix_n_avg

    t1qp = 0.25 * t1r
    head = _log_linear(t[:size], p[:size])
    if head is not None and n_avg > 0:
        qp_rate = -head[0] - 1.0 / t1r
        if qp_rate > 0:
            t1qp = n_avg / qp_rate

    def clip(name: str, value: float) -> float:
        lower, upper = opts.bound(name)
        span = upper - lower
        return float(min(max(value, lower + 1e-6 * span), upper - 1e-6 * span))

    return DecayParams(
        n_avg=clip("n_avg", n_avg) if opts.fix_n_avg is None else n_avg,
        t1qp=clip("t1qp", t1qp),
        t1r=clip("t1r", t1r) if opts.fix_t1r is None else t1r,
    )


def _covariance(jac: np.ndarray, residuals: np.ndarray, absolute: bool) -> np.ndarray:
    """(JᵀJ)⁺, escalada por la varianza residual cuando no hay errores absolutos"""
    cov = np.linalg.pinv(jac.T @ jac)
    if not absolute:
        dof = max(residuals.size - jac.shape[1], 1)
        cov = cov * float(residuals @ residuals) / dof
    return 0.5 * (cov + cov.T)


def _solve(
    residuals: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    max_iter: int,
    tol: float,
    jac: Union[str, Callable[[np.ndarray], np.ndarray]] = "3-point",
) -> Tuple[optimize.OptimizeResult, bool, int]:
    """trf (Jacobiano analítico o diferencias centrales); reinicio simplex si se estanca"""
    result = optimize.least_squares(
        residuals, x0, jac=jac, bounds=(lower, upper), method="trf",
        x_scale="jac", ftol=tol, xtol=tol, gtol=tol, max_nfev=max_iter,
    )
    evaluations = int(result.nfev)
    if result.status > 0:
        return result, True, evaluations

    logger.debug("fit_stalled", status=int(result.status), message=result.message)

    def cost(x: np.ndarray) -> float:
        r = residuals(np.clip(x, lower, upper))
        return 0.5 * float(r @ r)

    simplex = optimize.minimize(
        cost, result.x, method="Nelder-Mead",
        options={"maxiter": 50 * max_iter, "xatol": 1e-10, "fatol": 1e-14},
    )
    restart = optimize.least_squares(
        residuals, np.clip(simplex.x, lower, upper), jac=jac, bounds=(lower, upper),
        method="trf", x_scale="jac", ftol=tol, xtol=tol, gtol=tol, max_nfev=max_iter,
    )
    evaluations += int(simplex.nfev) + int(restart.nfev)
    best = restart if restart.cost <= result.cost else result
    return best, restart.status > 0, evaluations


# ---------------------------------------------------------------------------
# Ley de decaimiento
# ---------------------------------------------------------------------------

def fit_decay(trace: DecayTrace, opts: Optional[FitOptions] = None) -> FitResult:
    """Ajusta (n_avg, t1qp, t1r) a una traza; con pines optimiza solo los libres"""
    opts = opts or FitOptions()
    t, p = trace.t, trace.p
    if t.size < 6:
        raise InputError(f"fit_decay needs at least 6 points, got {t.size}")
    if np.ptp(p) < DEGENERATE_SPAN:
        raise InputError("degenerate trace: populations are constant")

    init = opts.init or initial_guess(trace, opts)
    pinned = {"n_avg": opts.fix_n_avg, "t1r": opts.fix_t1r}
    free = tuple(name for name in PARAM_NAMES if pinned.get(name) is None)
    weights = _weights(trace)

    def assemble(x: np.ndarray) -> Dict[str, float]:
        values = dict(zip(free, x))
        return {name: float(values.get(name, pinned.get(name))) for name in PARAM_NAMES}

    def residuals(x: np.ndarray) -> np.ndarray:
        full = assemble(x)
        return (decay_curve(t, full["n_avg"], full["t1qp"], full["t1r"]) - p) * weights

    columns = [PARAM_NAMES.index(name) for name in free]

    def jacobian(x: np.ndarray) -> np.ndarray:
        full = assemble(x)
        return decay_jacobian(t, full["n_avg"], full["t1qp"], full["t1r"])[:, columns] * weights[:, None]

    lower = np.array([opts.bound(name)[0] for name in free])
    upper = np.array([opts.bound(name)[1] for name in free])
    x0 = np.clip(np.array([getattr(init, name) for name in free]), lower, upper)

    result, converged, evaluations = _solve(residuals, x0, lower, upper, opts.max_iter, opts.tol, jac=jacobian)
    params = DecayParams(**assemble(result.x))
    covariance = _covariance(result.jac, result.fun, absolute=trace.sigma is not None)
    stderr = {name: math.sqrt(max(covariance[i, i], 0.0)) for i, name in enumerate(free)}

    fit = FitResult(
        params=params,
        residual_norm=float(np.sqrt(np.mean(result.fun**2))),
        covariance=covariance,
        stderr=stderr,
        n_iter=evaluations,
        converged=converged,
        free=free,
    )
    logger.debug(
        "decay_fitted",
        n_avg=round(params.n_avg, 5),
        t1qp=round(params.t1qp, 4),
        t1r=round(params.t1r, 4),
        converged=converged,
    )
    return fit


# ---------------------------------------------------------------------------
# Exponencial simple
# ---------------------------------------------------------------------------

def fit_exponential(trace: DecayTrace) -> ExponentialFit:
    """a·e^{−t/T1} + c"""
    t, p = trace.t, trace.p
    if t.size < 4:
        raise InputError(f"fit_exponential needs at least 4 points, got {t.size}")
    if np.ptp(p) < DEGENERATE_SPAN:
        raise InputError("degenerate trace: populations are constant")

    weights = _weights(trace)
    t1_guess = max(0.5 * (t[-1] - t[0]), 1.0)
    line = _log_linear(t, p)
    if line is not None and line[0] < 0:
        t1_guess = -1.0 / line[0]

    def residuals(x: np.ndarray) -> np.ndarray:
        amplitude, t1, offset = x
        return (amplitude * np.exp(-t / t1) + offset - p) * weights

    lower = np.array([0.0, 1e-3, -1.0])
    upper = np.array([10.0, 1e6, 1.0])
    x0 = np.clip(np.array([p[0] - p[-1], t1_guess, 0.0]), lower + 1e-9, upper - 1e-9)
    result, converged, _ = _solve(residuals, x0, lower, upper, 200, 1e-12)
    amplitude, t1, offset = (float(v) for v in result.x)
    return ExponentialFit(
        t1=t1,
        amplitude=amplitude,
        offset=offset,
        residual_norm=float(np.sqrt(np.mean(result.fun**2))),
        converged=converged,
    )


# ---------------------------------------------------------------------------
# Recuperación de ⟨n_qp⟩
# ---------------------------------------------------------------------------

def fit_recovery(series: Sequence[Tuple[float, float]]) -> RecoveryFit:
    """⟨n⟩(t) = n0·e^{−Γout t} + ⟨n⟩s·(1 − e^{−Γout t})"""
    data = np.asarray(series, dtype=float)
    if data.ndim != 2 or data.shape[0] < 4 or data.shape[1] != 2:
        raise InputError("fit_recovery needs at least 4 (delay, n_avg) pairs")
    t, n = data[:, 0], data[:, 1]
    if np.any(np.diff(t) <= 0):
        raise InputError("recovery delays must be strictly increasing")

    if np.ptp(n) < DEGENERATE_SPAN:
        # Sin recuperación: Γout no es identificable
        return RecoveryFit(gamma_out=float("nan"), n_steady=float(n[0]), n0=float(n[0]), converged=False)

    # Punto medio de la recuperación como escala inicial
    halfway = 0.5 * (n[0] + n[-1])
    crossing = int(np.argmin(np.abs(n - halfway)))
    scale = max(t[crossing] - t[0], (t[-1] - t[0]) / 10.0)
    x0 = np.array([math.log(2.0) / scale, n[-1], n[0]])

    def residuals(x: np.ndarray) -> np.ndarray:
        gamma, steady, start = x
        decay = np.exp(-gamma * t)
        return start * decay - steady * np.expm1(-gamma * t) - n

    lower = np.array([1e-9, 0.0, 0.0])
    upper = np.array([1e3, np.inf, np.inf])
    result, converged, _ = _solve(residuals, np.clip(x0, lower, upper), lower, upper, 500, 1e-12)
    gamma, steady, start = (float(v) for v in result.x)
    covariance = _covariance(result.jac, result.fun, absolute=False)
    stderr = {
        name: math.sqrt(max(covariance[i, i], 0.0))
        for i, name in enumerate(("gamma_out", "n_steady", "n0"))
    }
    if abs(start - steady) <= 1e-6 * max(steady, 1.0):
        converged = False
    return RecoveryFit(gamma_out=gamma, n_steady=steady, n0=start, converged=converged, stderr=stderr)


# ---------------------------------------------------------------------------
# Incertidumbre
# ---------------------------------------------------------------------------

def bootstrap(trace: DecayTrace, opts: FitOptions, n_resamples: int, seed: int) -> BootstrapResult:
    """
    Bootstrap de residuos estandarizados: cada réplica remuestrea los residuos del
    ajuste base sobre el modelo ajustado. La réplica k usa el substream (seed, k).
    """
    if n_resamples < 100:
        raise DomainError("bootstrap needs at least 100 resamples")

    base = fit_decay(trace, opts)
    t = trace.t
    model = decay_curve(t, base.params.n_avg, base.params.t1qp, base.params.t1r)
    scale = trace.sigma if trace.sigma is not None else np.ones(t.size)
    scale = np.maximum(scale, WEIGHT_FLOOR) if trace.sigma is not None else scale
    standardized = (trace.p - model) / scale

    samples: List[List[float]] = []
    failed = 0
    for k in range(n_resamples):
        rng = substream(seed, k, 0)
        draw = rng.choice(standardized, size=standardized.size, replace=True)
        populations = np.clip(model + scale * draw, 0.0, 1.0)
        replica = trace.model_copy(update={"populations": tuple(float(v) for v in populations)})
        try:
            fit = fit_decay(replica, opts.model_copy(update={"init": base.params}))
        except QPumpError:
            failed += 1
            continue
        if not fit.converged:
            failed += 1
            continue
        samples.append([getattr(fit.params, name) for name in base.free])

    if failed > MAX_BOOTSTRAP_FAILURE * n_resamples:
        raise FitConvergenceError(f"bootstrap: {failed} of {n_resamples} resample fits failed")

    matrix = np.asarray(samples, dtype=float)
    std = {name: float(matrix[:, i].std(ddof=1)) for i, name in enumerate(base.free)}
    logger.info("bootstrap_finished", n_resamples=n_resamples, n_failed=failed, seed=seed)
    return BootstrapResult(std=std, samples=matrix, n_failed=failed)


def trace_variability(
    per_trace_population: np.ndarray,
    delays: Sequence[float],
    trials_per_trace: Sequence[int],
    opts: Optional[FitOptions] = None,
    normalize: bool = False,
) -> Dict[str, Any]:
    """Ajusta cada repetición por separado y resume la dispersión de T1/e y n_avg"""
    matrix = np.atleast_2d(np.asarray(per_trace_population, dtype=float))
    counts = list(trials_per_trace)
    if len(counts) != matrix.shape[0]:
        raise DomainError("trials_per_trace must have one entry per repetition")

    t1e, n_avg, failed = [], [], 0
    for row, count in zip(matrix, counts):
        stderr = np.sqrt(row * (1.0 - row) / max(count, 1))
        trace = DecayTrace(
            delays=tuple(float(d) for d in delays),
            populations=tuple(float(v) for v in row),
            stderr=tuple(float(s) for s in stderr),
            n_trials=int(count),
        )
        try:
            fit = fit_decay(trace.normalized() if normalize else trace, opts)
        except (QPumpError, ValueError):
            failed += 1
            continue
        t1e.append(fit.t1e)
        n_avg.append(fit.params.n_avg)

    def summary(values: List[float]) -> Tuple[float, float]:
        if not values:
            return float("nan"), float("nan")
        arr = np.asarray(values)
        return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0

    t1e_mean, t1e_std = summary(t1e)
    n_mean, n_std = summary(n_avg)
    return {
        "n_traces": int(matrix.shape[0]),
        "n_failed": failed,
        "t1e_mean_us": t1e_mean,
        "t1e_std_us": t1e_std,
        "n_avg_mean": n_mean,
        "n_avg_std": n_std,
    }
