"""
QPUMP - Monte Carlo
Simulador por eventos (relojes exponenciales en competencia) de un qubit y una
población de cuasipartículas resuelta en energía bajo secuencias de bombeo
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from qpump.core.error_handler import DomainError, SimulationFlagError
from qpump.models.schemas import (
    BathParams,
    DecayParams,
    DecayTrace,
    DeviceParams,
    FitOptions,
    PulseSequence,
)
from qpump.services.analytic import nu
from qpump.utils.rng import UniformStream

logger = structlog.get_logger("QPUMP_MONTECARLO")

BLOCK_TRIALS = 500
FLIP_EPS = 1e-12
DEFAULT_QP_CAP = 64


@dataclass(frozen=True)
class Quasiparticle:
    """Cuasipartícula; `energy` es la energía sobre el borde del gap, en GHz"""

    energy: float

    def __post_init__(self):
        if not self.energy > 0:
            raise DomainError("quasiparticle excess energy must be positive")


@dataclass
class TrialState:
    """Estado de un ensayo: nivel del qubit, energías de exceso, reloj y substream"""

    excited: bool
    qps: List[float]
    clock: float
    stream: UniformStream
    flagged: bool = False

    @classmethod
    def initial(cls, seed: int, trial: int) -> "TrialState":
        return cls(excited=False, qps=[], clock=0.0, stream=UniformStream(seed, trial, 0))

    @property
    def rng_stream(self) -> Tuple[int, int, int]:
        return self.stream.key

    def fork(self, fork_index: int) -> "TrialState":
        """Continuación independiente desde el estado actual"""
        return TrialState(
            excited=self.excited,
            qps=list(self.qps),
            clock=self.clock,
            stream=self.stream.fork(fork_index),
            flagged=self.flagged,
        )


@dataclass(frozen=True)
class Kinetics:
    """Tasas del núcleo de eventos, precalculadas una vez por corrida"""

    gamma_in: float
    gamma_out: float
    delta_e: float
    gap: float
    omega0: float
    residual_rate: float
    qp_rate: float
    excite_rate: float
    relax_exit: float
    energy_resolved: bool
    anchor: float
    qp_cap: int

    @classmethod
    def build(cls, bath: BathParams, decay: DecayParams, device: DeviceParams, qp_cap: int = DEFAULT_QP_CAP) -> "Kinetics":
        return cls(
            gamma_in=bath.gamma_in,
            gamma_out=bath.gamma_out,
            delta_e=bath.delta_e,
            gap=device.gap,
            omega0=device.omega0,
            residual_rate=1.0 / decay.t1r,
            qp_rate=1.0 / decay.t1qp,
            excite_rate=bath.excitation_ratio / decay.t1qp,
            relax_exit=bath.relax_exit_probability,
            energy_resolved=bath.energy_resolved,
            # Una cuasipartícula de energía δE sale a la tasa base Γout
            anchor=nu(device.gap + bath.delta_e, device.gap),
            qp_cap=qp_cap,
        )

    def exit_rate(self, excess: float) -> float:
        """Γout·ν(Δ+δE)/ν(Δ+ε)"""
        if not self.energy_resolved:
            return self.gamma_out
        gap = self.gap
        return self.gamma_out * self.anchor * math.sqrt(excess * (2.0 * gap + excess)) / (gap + excess)


def _advance(state: TrialState, horizon: float, kin: Kinetics) -> TrialState:
    """Bucle de eventos exacto hasta `horizon`"""
    qps = state.qps
    stream = state.stream
    resolved = kin.energy_resolved

    while not state.flagged:
        if resolved:
            exits = [kin.exit_rate(e) for e in qps]
            exit_total = sum(exits)
        else:
            exits = None
            exit_total = kin.gamma_out * len(qps)

        hot: Sequence[int] = ()
        if state.excited:
            residual = kin.residual_rate
            qp_total = kin.qp_rate * len(qps)
            excite_total = 0.0
        else:
            residual = 0.0
            qp_total = 0.0
            if resolved and kin.excite_rate > 0:
                hot = [i for i, e in enumerate(qps) if e >= kin.omega0]
            excite_total = kin.excite_rate * len(hot)

        total = kin.gamma_in + exit_total + residual + qp_total + excite_total
        if total <= 0.0:
            state.clock = horizon
            break
        wait = -math.log(stream.uniform()) / total
        if state.clock + wait >= horizon:
            state.clock = horizon
            break
        state.clock += wait

        pick = stream.uniform() * total

        # (a) llegada
        if pick < kin.gamma_in:
            qps.append(stream.exponential(kin.delta_e))
            if len(qps) > kin.qp_cap:
                state.flagged = True
            continue
        pick -= kin.gamma_in

        # (b) salida
        if pick < exit_total:
            if exits is None:
                index = min(int(pick / kin.gamma_out), len(qps) - 1)
            else:
                index = len(qps) - 1
                for i, rate in enumerate(exits):
                    if pick < rate:
                        index = i
                        break
                    pick -= rate
            qps.pop(index)
            continue
        pick -= exit_total

        if state.excited:
            # (c) relajación residual
            if pick < residual or not qps:
                state.excited = False
                continue
            pick -= residual
            # (d) relajación por cuasipartícula: sale de la región o recibe ω0
            index = min(int(pick / kin.qp_rate), len(qps) - 1)
            if kin.relax_exit >= 1.0 or (kin.relax_exit > 0.0 and stream.bernoulli(kin.relax_exit)):
                qps.pop(index)
            else:
                qps[index] += kin.omega0
            state.excited = False
        else:
            if not hot:
                # pick en el borde superior por redondeo: evento nulo
                continue
            # (e) excitación: la cuasipartícula cede ω0
            index = hot[min(int(pick / kin.excite_rate), len(hot) - 1)]
            qps[index] = max(qps[index] - kin.omega0, FLIP_EPS)
            state.excited = True

    return state


def step(
    state: TrialState,
    horizon: float,
    bath: BathParams,
    decay: DecayParams,
    device: DeviceParams,
    qp_cap: int = DEFAULT_QP_CAP,
) -> TrialState:
    """Avanza el ensayo hasta `horizon` (modifica y retorna `state`)"""
    if horizon < state.clock:
        raise DomainError("horizon must not precede the trial clock")
    state.qps[:] = [Quasiparticle(energy).energy for energy in state.qps]
    return _advance(state, horizon, Kinetics.build(bath, decay, device, qp_cap))


def apply_pulse(state: TrialState, flip_probability: float) -> None:
    """Pulso instantáneo: invierte el qubit con probabilidad sin²(θ/2)"""
    if flip_probability >= 1.0 - FLIP_EPS:
        state.excited = not state.excited
    elif flip_probability > FLIP_EPS and state.stream.bernoulli(flip_probability):
        state.excited = not state.excited


@dataclass
class ProtocolResult:
    trace: DecayTrace
    nqp_times: np.ndarray
    nqp_vs_time: np.ndarray
    nqp_stderr: np.ndarray
    per_trace_population: np.ndarray
    interval_populations: np.ndarray
    mean_energy_at_probe: float
    energy_stderr: float
    warmup_counts: np.ndarray
    readout_counts: np.ndarray
    n_excluded: int
    warnings: List[str] = field(default_factory=list)

    @property
    def n_valid(self) -> int:
        return self.trace.n_trials

    @property
    def nqp_at_probe(self) -> float:
        return float(self.nqp_vs_time[-1])

    @property
    def nqp_at_probe_stderr(self) -> float:
        return float(self.nqp_stderr[-1])

    def metadata(self) -> Dict[str, Any]:
        return {
            "n_valid": self.n_valid,
            "n_excluded": self.n_excluded,
            "warmup_mean_nqp": float(self.warmup_counts.mean()) if self.warmup_counts.size else None,
            "nqp_at_probe": self.nqp_at_probe,
            "nqp_at_probe_stderr": self.nqp_at_probe_stderr,
            "mean_energy_at_probe_ghz": self.mean_energy_at_probe,
            "interval_populations": [float(p) for p in self.interval_populations],
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True)
class _Block:
    start: int
    stop: int
    seq: PulseSequence
    kin: Kinetics
    seed: int
    warmup_time: float


def _simulate_block(block: _Block) -> Dict[str, np.ndarray]:
    seq, kin = block.seq, block.kin
    count = block.stop - block.start
    n_grid = len(seq.readout_grid)
    n_checkpoints = seq.n_pulses + 2
    flip = seq.flip_probability

    readouts = np.zeros((count, n_grid), dtype=bool)
    intervals = np.zeros((count, seq.n_pulses), dtype=bool)
    checkpoints = np.zeros((count, n_checkpoints), dtype=np.int64)
    energy_sum = np.zeros(count)
    energy_sq = np.zeros(count)
    flagged = np.zeros(count, dtype=bool)

    for row, trial in enumerate(range(block.start, block.stop)):
        state = TrialState.initial(block.seed, trial)
        _advance(state, block.warmup_time, kin)
        checkpoints[row, 0] = len(state.qps)

        for k in range(seq.n_pulses):
            apply_pulse(state, flip)
            _advance(state, state.clock + seq.spacing, kin)
            intervals[row, k] = state.excited
            checkpoints[row, k + 1] = len(state.qps)

        _advance(state, state.clock + seq.probe_delay, kin)
        checkpoints[row, -1] = len(state.qps)
        energy_sum[row] = sum(state.qps)
        energy_sq[row] = sum(e * e for e in state.qps)

        # El pulso de prueba es siempre π
        state.excited = not state.excited
        for j, tau in enumerate(seq.readout_grid):
            branch = state.fork(j + 1)
            _advance(branch, branch.clock + tau, kin)
            if branch.flagged:
                state.flagged = True
                break
            readouts[row, j] = branch.excited
        flagged[row] = state.flagged

    return {
        "readouts": readouts,
        "intervals": intervals,
        "checkpoints": checkpoints,
        "energy_sum": energy_sum,
        "energy_sq": energy_sq,
        "flagged": flagged,
    }


def _run_blocks(blocks: List[_Block], workers: int) -> List[Dict[str, np.ndarray]]:
    if workers <= 1 or len(blocks) <= 1:
        return [_simulate_block(b) for b in blocks]
    # map conserva el orden de los bloques: la reducción es por índice
    with ProcessPoolExecutor(max_workers=min(workers, len(blocks))) as pool:
        return list(pool.map(_simulate_block, blocks))


def run_protocol(
    seq: PulseSequence,
    bath: BathParams,
    decay: DecayParams,
    device: DeviceParams,
    n_trials: int,
    seed: int,
    workers: int = 1,
    warmup_factor: float = 10.0,
    qp_cap: int = DEFAULT_QP_CAP,
    repetitions: int = 10,
) -> ProtocolResult:
    """Calentamiento al estado estacionario, N pulsos, pulso de prueba y lecturas"""
    if n_trials < 1:
        raise DomainError("n_trials must be at least 1")
    if warmup_factor < 10.0:
        raise DomainError("warmup_factor must be at least 10")

    kin = Kinetics.build(bath, decay, device, qp_cap)
    warmup_time = warmup_factor / bath.gamma_out
    blocks = [
        _Block(start, min(start + BLOCK_TRIALS, n_trials), seq, kin, seed, warmup_time)
        for start in range(0, n_trials, BLOCK_TRIALS)
    ]
    logger.info("protocol_started", n_pulses=seq.n_pulses, n_trials=n_trials, seed=seed, workers=workers)
    parts = _run_blocks(blocks, workers)

    merged = {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}
    valid = ~merged["flagged"]
    n_valid = int(valid.sum())
    n_excluded = n_trials - n_valid
    if n_valid == 0:
        raise SimulationFlagError(f"all {n_trials} trials exceeded the quasiparticle cap ({qp_cap})")

    readouts = merged["readouts"][valid]
    populations = readouts.mean(axis=0)
    stderr = np.sqrt(populations * (1.0 - populations) / n_valid)
    trace = DecayTrace(
        delays=tuple(float(t) for t in seq.readout_grid),
        populations=tuple(float(p) for p in populations),
        stderr=tuple(float(s) for s in stderr),
        n_trials=n_valid,
    )

    checkpoints = merged["checkpoints"][valid].astype(float)
    nqp_mean = checkpoints.mean(axis=0)
    nqp_err = checkpoints.std(axis=0, ddof=1) / math.sqrt(n_valid) if n_valid > 1 else np.zeros_like(nqp_mean)
    times = np.concatenate(
        ([0.0], seq.spacing * np.arange(1, seq.n_pulses + 1), [seq.n_pulses * seq.spacing + seq.probe_delay])
    )

    # Energía media por cuasipartícula en el instante de prueba (promedio agrupado)
    n_probe = checkpoints[:, -1].sum()
    if n_probe > 0:
        e_sum = merged["energy_sum"][valid].sum()
        e_sq = merged["energy_sq"][valid].sum()
        mean_energy = float(e_sum / n_probe)
        variance = max(e_sq / n_probe - mean_energy**2, 0.0)
        energy_err = math.sqrt(variance / n_probe)
    else:
        mean_energy, energy_err = float("nan"), float("nan")

    groups = np.array_split(readouts, min(repetitions, n_valid))
    per_trace = np.vstack([g.mean(axis=0) for g in groups])

    warnings: List[str] = []
    if seq.repetition_period < 3.0 / bath.gamma_out:
        warnings.append(
            f"repetition_period {seq.repetition_period:g} us is shorter than 3/gamma_out; "
            "the bath would not reset between trials"
        )
    if n_excluded:
        warnings.append(f"{n_excluded} trials exceeded the quasiparticle cap and were excluded")

    logger.info(
        "protocol_finished",
        n_pulses=seq.n_pulses,
        n_valid=n_valid,
        n_excluded=n_excluded,
        nqp_at_probe=round(float(nqp_mean[-1]), 4),
    )
    return ProtocolResult(
        trace=trace,
        nqp_times=times,
        nqp_vs_time=nqp_mean,
        nqp_stderr=nqp_err,
        per_trace_population=per_trace,
        interval_populations=merged["intervals"][valid].mean(axis=0),
        mean_energy_at_probe=mean_energy,
        energy_stderr=energy_err,
        warmup_counts=merged["checkpoints"][valid][:, 0],
        readout_counts=readouts.sum(axis=1),
        n_excluded=n_excluded,
        warnings=warnings,
    )


@dataclass
class RecoveryResult:
    probe_delays: np.ndarray
    results: List[ProtocolResult]
    fits: List[Any]
    n_avg_fit: np.ndarray
    n_avg_fit_stderr: np.ndarray
    n_direct: np.ndarray
    n_direct_stderr: np.ndarray
    recovery_fit: Optional[Any]
    recovery_fit_direct: Optional[Any]


def recovery_experiment(
    seq: PulseSequence,
    probe_delays: Sequence[float],
    bath: BathParams,
    decay: DecayParams,
    device: DeviceParams,
    n_trials: int,
    seed: int,
    fit_options: Optional[FitOptions] = None,
    workers: int = 1,
    warmup_factor: float = 10.0,
    qp_cap: int = DEFAULT_QP_CAP,
    normalize: bool = True,
) -> RecoveryResult:
    """Bombeo seguido de un retardo variable antes del pulso de prueba"""
    from qpump.models.fitting import fit_decay, fit_recovery

    delays = np.asarray(probe_delays, dtype=float)
    if delays.size == 0 or np.any(np.diff(delays) <= 0):
        raise DomainError("probe delays must be strictly increasing")
    options = fit_options or FitOptions(fix_t1r=decay.t1r)

    results, fits = [], []
    for delay in delays:
        # Misma semilla en cada retardo: números aleatorios comunes entre puntos
        result = run_protocol(
            seq.model_copy(update={"probe_delay": float(delay)}),
            bath, decay, device, n_trials, seed,
            workers=workers, warmup_factor=warmup_factor, qp_cap=qp_cap,
        )
        results.append(result)
        trace = result.trace.normalized() if normalize else result.trace
        fits.append(fit_decay(trace, options))

    n_fit = np.array([f.params.n_avg for f in fits])
    n_fit_err = np.array([f.stderr.get("n_avg", float("nan")) for f in fits])
    n_direct = np.array([r.nqp_at_probe for r in results])
    n_direct_err = np.array([r.nqp_at_probe_stderr for r in results])

    recovery_fit = recovery_direct = None
    if delays.size >= 4:
        recovery_fit = fit_recovery(list(zip(delays, n_fit)))
        recovery_direct = fit_recovery(list(zip(delays, n_direct)))

    return RecoveryResult(
        probe_delays=delays,
        results=results,
        fits=fits,
        n_avg_fit=n_fit,
        n_avg_fit_stderr=n_fit_err,
        n_direct=n_direct,
        n_direct_stderr=n_direct_err,
        recovery_fit=recovery_fit,
        recovery_fit_direct=recovery_direct,
    )
