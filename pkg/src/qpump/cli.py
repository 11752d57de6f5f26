#!/usr/bin/env python3
"""
QPUMP - Command line
Subcomandos de simulación, ajuste, barridos y validación. Cada archivo de salida
se acompaña de un manifiesto JSON con el digest de la configuración y la semilla.
"""

import argparse
import sys
import time
from typing import Any, Callable, Dict, List, Optional

import structlog

from qpump import __version__
from qpump.core.config import Settings, get_settings
from qpump.core.config_loader import config_digest, load_config, to_document, validate
from qpump.core.error_handler import (
    EXIT_INTERNAL,
    EXIT_OK,
    CliErrorHandler,
    DomainError,
    FitConvergenceError,
    SimulationFlagError,
)
from qpump.core.logging_config import configure_logging
from qpump.models.fitting import bootstrap, fit_decay
from qpump.models.schemas import QpDistribution, QPumpConfig
from qpump.services import experiments
from qpump.services.validation_suite import results_table, run_suite
from qpump.utils.io import RunManifest, read_trace, sibling_path, write_csv, write_json, write_manifest

logger = structlog.get_logger("QPUMP_CLI")


# ---------------------------------------------------------------------------
# Utilidades comunes
# ---------------------------------------------------------------------------

def _override(config: QPumpConfig, section: str, **values: Any) -> QPumpConfig:
    """Aplica overrides a una sección y revalida el documento completo"""
    document = to_document(config)
    document[section].update(values)
    return validate(document)


def _effective_config(args: argparse.Namespace) -> QPumpConfig:
    """Configuración cargada más los overrides de línea de comandos"""
    config = load_config(args.config)
    trials = getattr(args, "trials", None)
    if trials is not None:
        config = _override(config, "sim", n_trials=trials)
    return config


def _seed(args: argparse.Namespace, config: QPumpConfig) -> int:
    seed = config.sim.seed if args.seed is None else args.seed
    if not 0 <= seed < 2**64:
        raise DomainError("--seed must be a 64-bit unsigned integer")
    return seed


def _workers(args: argparse.Namespace, settings: Settings) -> int:
    return max(1, args.workers if args.workers is not None else settings.threads)


def _finish(
    command: str,
    config: QPumpConfig,
    seed: Optional[int],
    output: experiments.SweepOutput,
    out: Optional[str],
    started: float,
) -> int:
    """Escribe tablas y manifiesto; verifica el umbral de ensayos excluidos"""
    write_csv(output.table, out)
    for name, frame in output.extra_tables.items():
        if out is not None:
            write_csv(frame, sibling_path(out, name))

    digest = config_digest(config)
    manifest = RunManifest(
        command=command,
        config_digest=digest,
        seed=seed,
        wall_clock_s=round(time.perf_counter() - started, 3),
        warnings=list(output.warnings),
        config=to_document(config),
        extra=output.metadata,
    )
    write_manifest(manifest, out)
    for warning in output.warnings:
        logger.warning("run_warning", command=command, message=warning)
    logger.info("command_finished", command=command, digest=digest[:12], seed=seed)

    if output.excluded_fraction > config.sim.max_flag_fraction:
        raise SimulationFlagError(
            f"{output.n_excluded} of {output.n_trials} trials exceeded the quasiparticle cap "
            f"(limit {config.sim.max_flag_fraction:.2%})"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Subcomandos
# ---------------------------------------------------------------------------

def cmd_simulate_decay(args: argparse.Namespace, settings: Settings) -> int:
    started = time.perf_counter()
    config = _effective_config(args)
    if args.n_pulses is not None:
        config = _override(config, "pulses", n_pulses=args.n_pulses)
    seed = _seed(args, config)
    output = experiments.simulate_decay(config, seed, _workers(args, settings), mode=args.mode)
    return _finish("simulate-decay", config, seed, output, args.out, started)


def cmd_simulate_pump(args: argparse.Namespace, settings: Settings) -> int:
    started = time.perf_counter()
    config = _effective_config(args)
    update: Dict[str, Any] = {}
    if args.theta is not None:
        update["theta"] = args.theta
    if args.pulse_counts:
        update["pulse_counts"] = list(args.pulse_counts)
    if update:
        config = _override(config, "pulses", **update)
    seed = _seed(args, config)
    output = experiments.pump_sweep(config, seed, _workers(args, settings))
    return _finish("simulate-pump", config, seed, output, args.out, started)


def cmd_fit(args: argparse.Namespace, settings: Settings) -> int:
    config = load_config(args.config)
    trace = read_trace(args.trace)
    normalize = config.fit.normalize if args.normalize is None else args.normalize
    if normalize:
        trace = trace.normalized()

    update: Dict[str, Any] = {}
    if args.free_t1r:
        update["fix_t1r"] = None
    elif args.fix_t1r is not None:
        update["fix_t1r"] = args.fix_t1r
    if args.fix_n_avg is not None:
        update["fix_n_avg"] = args.fix_n_avg
    options = config.fit.options(**update)

    result = fit_decay(trace, options)
    document = result.to_dict()

    resamples = args.bootstrap if args.bootstrap is not None else config.fit.bootstrap_resamples
    if resamples:
        seed = _seed(args, config)
        spread = bootstrap(trace, options, resamples, seed)
        document["bootstrap"] = {
            "n_resamples": resamples,
            "n_failed": spread.n_failed,
            "seed": seed,
            "std": spread.std,
        }
    write_json(document, args.out)

    if not result.converged:
        raise FitConvergenceError(f"fit did not converge within {options.max_iter} evaluations")
    return EXIT_OK


def cmd_sweep_temperature(args: argparse.Namespace, settings: Settings) -> int:
    started = time.perf_counter()
    config = _effective_config(args)
    seed = _seed(args, config)
    output = experiments.temperature_sweep(config, seed, simulate_fit=args.simulate_fit)
    return _finish("sweep-temperature", config, seed if args.simulate_fit else None, output, args.out, started)


def cmd_sweep_flux(args: argparse.Namespace, settings: Settings) -> int:
    started = time.perf_counter()
    config = load_config(args.config)
    if args.distribution is not None:
        flux = {**to_document(config)["sim"]["flux"], "qp_distribution": args.distribution}
        config = _override(config, "sim", flux=flux)
    output = experiments.flux_sweep(config)
    return _finish("sweep-flux", config, None, output, args.out, started)


def cmd_recovery(args: argparse.Namespace, settings: Settings) -> int:
    started = time.perf_counter()
    config = _effective_config(args)
    seed = _seed(args, config)
    output = experiments.recovery_sweep(config, seed, _workers(args, settings))
    return _finish("recovery", config, seed, output, args.out, started)


def cmd_validate(args: argparse.Namespace, settings: Settings) -> int:
    config = load_config(args.config)
    seed = _seed(args, config)
    kwargs = {"n_trials": args.trials} if args.trials is not None else {}
    results = run_suite(config.device, quick=args.quick, seed=seed, workers=_workers(args, settings), **kwargs)
    table = results_table(results)
    sys.stdout.write(table.to_string(index=False) + "\n")
    sys.stdout.flush()
    if args.out is not None:
        write_csv(table, args.out)
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.warning("validation_failed", checks=failed)
        return EXIT_INTERNAL
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace, Settings], int]] = {
    "simulate-decay": cmd_simulate_decay,
    "simulate-pump": cmd_simulate_pump,
    "fit": cmd_fit,
    "sweep-temperature": cmd_sweep_temperature,
    "sweep-flux": cmd_sweep_flux,
    "recovery": cmd_recovery,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qpump",
        description="QPUMP - Bombeo de cuasipartículas: simulación y ajuste de decaimientos de qubits",
    )
    parser.add_argument("--version", action="version", version=f"qpump {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="Archivo JSON de configuración del experimento")
    common.add_argument("--seed", type=int, default=None, help="Semilla maestra (por defecto sim.seed)")
    common.add_argument("--out", default=None, help="Archivo de salida (por defecto stdout)")
    common.add_argument("--workers", type=int, default=None, help="Procesos para el Monte Carlo (QPUMP_THREADS)")

    trials = argparse.ArgumentParser(add_help=False)
    trials.add_argument("--trials", type=int, default=None, help="Sobrescribe sim.n_trials")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-decay", parents=[common, trials], help="Traza de decaimiento tras el protocolo")
    p.add_argument("--mode", choices=experiments.MODES, default="montecarlo", help="Monte Carlo o ley cerrada")
    p.add_argument("--n-pulses", type=int, default=None, help="Pulsos de bombeo antes del pulso de prueba")

    p = sub.add_parser("simulate-pump", parents=[common, trials], help="Barrido en número de pulsos N")
    p.add_argument("--theta", type=float, default=None, help="Ángulo de rotación de los pulsos (rad)")
    p.add_argument("--pulse-counts", type=int, nargs="+", default=None, help="Lista de N a simular")

    p = sub.add_parser("fit", parents=[common], help="Ajusta la ley de decaimiento a una traza CSV")
    p.add_argument("--trace", required=True, help="CSV con columnas delay_us,population[,stderr,n_trials]")
    pin = p.add_mutually_exclusive_group()
    pin.add_argument("--fix-t1r", type=float, default=None, help="Fija T1R (us)")
    pin.add_argument("--free-t1r", action="store_true", help="Deja T1R libre aunque la configuración lo fije")
    p.add_argument("--fix-n-avg", type=float, default=None, help="Fija <n_qp>")
    p.add_argument(
        "--normalize",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="Normaliza la traza a su valor en tau=0 (por defecto fit.normalize)",
    )
    p.add_argument("--bootstrap", type=int, default=None, help="Réplicas de bootstrap (>= 100)")

    p = sub.add_parser("sweep-temperature", parents=[common, trials], help="T1 vs temperatura")
    p.add_argument("--simulate-fit", action="store_true", help="Agrega la columna t1_fit_us")

    p = sub.add_parser("sweep-flux", parents=[common], help="T1qp y frecuencia vs flujo")
    p.add_argument("--distribution", choices=[d.value for d in QpDistribution], default=None)

    sub.add_parser("recovery", parents=[common, trials], help="Recuperación de <n_qp> tras el bombeo")

    p = sub.add_parser("validate", parents=[common, trials], help="Suite de verificación cruzada")
    p.add_argument("--quick", action="store_true", help="Ensayos / 10 y tolerancia de 5 SE")

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    settings = get_settings()
    configure_logging(settings)
    handler = CliErrorHandler(is_development=settings.is_development)

    try:
        return COMMANDS[args.command](args, settings)
    except KeyboardInterrupt:
        logger.warning("interrupted", command=args.command)
        return 130
    except Exception as exc:  # noqa: BLE001
        return handler.handle(exc)


if __name__ == "__main__":
    sys.exit(main())
