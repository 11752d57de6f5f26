"""
QPUMP - IO
CSV de trazas y tablas, JSON y manifiesto de reproducibilidad junto a cada salida
"""

import io
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import pandas as pd
import structlog
from pydantic import BaseModel, ConfigDict, Field

from qpump import __version__
from qpump.core.error_handler import InputError
from qpump.models.schemas import DecayTrace

logger = structlog.get_logger("QPUMP_IO")

PathLike = Union[str, Path]
TRACE_COLUMNS = ("delay_us", "population", "stderr", "n_trials")


class RunManifest(BaseModel):
    """Sidecar JSON que acompaña a cada archivo de salida"""

    model_config = ConfigDict(extra="forbid")

    command: str
    config_digest: str
    seed: Optional[int] = None
    tool_version: str = __version__
    wall_clock_s: float = 0.0
    warnings: List[str] = Field(default_factory=list)
    config: Dict[str, Any] = Field(default_factory=dict)
    extra: Dict[str, Any] = Field(default_factory=dict)


def manifest_path(out: PathLike) -> Path:
    path = Path(out)
    return path.with_name(path.name + ".manifest.json")


def sibling_path(out: PathLike, suffix: str) -> Path:
    """`pump.csv` + `traces` -> `pump_traces.csv`"""
    path = Path(out)
    return path.with_name(f"{path.stem}_{suffix}{path.suffix or '.csv'}")


def frame_to_csv(frame: pd.DataFrame) -> str:
    # repr de float: decimal más corto con ida y vuelta exacta
    return frame.to_csv(index=False, lineterminator="\n")


def write_csv(frame: pd.DataFrame, out: Optional[PathLike]) -> Optional[Path]:
    """Escribe en `out` o en stdout si no hay ruta"""
    text = frame_to_csv(frame)
    if out is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return None
    path = Path(out)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(text)
    logger.info("csv_written", path=str(path), rows=len(frame))
    return path


def write_json(data: Dict[str, Any], out: Optional[PathLike]) -> Optional[Path]:
    text = json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n"
    if out is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return None
    path = Path(out)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    logger.info("json_written", path=str(path))
    return path


def write_manifest(manifest: RunManifest, out: Optional[PathLike]) -> Optional[Path]:
    if out is None:
        logger.info("manifest_skipped", command=manifest.command, digest=manifest.config_digest)
        return None
    return write_json(manifest.model_dump(mode="json"), manifest_path(out))


def _json_default(value: Any) -> Any:
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def trace_to_frame(trace: DecayTrace) -> pd.DataFrame:
    size = len(trace.delays)
    return pd.DataFrame(
        {
            "delay_us": list(trace.delays),
            "population": list(trace.populations),
            "stderr": list(trace.stderr) if trace.stderr else [0.0] * size,
            "n_trials": [int(trace.n_trials)] * size,
        }
    )


def read_trace(path: PathLike) -> DecayTrace:
    """Lee un CSV de traza; los errores nombran la línea del archivo"""
    trace_path = Path(path)
    if not trace_path.is_file():
        raise InputError(f"trace file not found: {trace_path}")
    text = trace_path.read_text(encoding="utf-8")
    if not text.strip():
        raise InputError(f"trace file is empty: {trace_path}")

    try:
        frame = pd.read_csv(io.StringIO(text), dtype=str, skip_blank_lines=True)
    except pd.errors.ParserError as exc:
        raise InputError(f"malformed trace CSV: {exc}") from exc

    frame.columns = [str(c).strip() for c in frame.columns]
    missing = [c for c in ("delay_us", "population") if c not in frame.columns]
    if missing:
        raise InputError(f"trace CSV is missing columns: {', '.join(missing)}")
    if frame.empty:
        raise InputError(f"trace file has no data rows: {trace_path}")

    columns = [c for c in TRACE_COLUMNS if c in frame.columns]
    numeric = frame[columns].apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce"))
    bad = numeric.isna().any(axis=1)
    if bad.any():
        row = int(bad.to_numpy().nonzero()[0][0])
        # Línea 1 es el encabezado
        raise InputError(f"line {row + 2}: non-numeric or missing value")

    out_of_range = (numeric["population"] < 0) | (numeric["population"] > 1)
    if out_of_range.any():
        row = int(out_of_range.to_numpy().nonzero()[0][0])
        raise InputError(f"line {row + 2}: population must lie in [0, 1]")

    stderr = ()
    if "stderr" in numeric:
        negative = numeric["stderr"] < 0
        if negative.any():
            row = int(negative.to_numpy().nonzero()[0][0])
            raise InputError(f"line {row + 2}: stderr must be non-negative")
        # Todo cero equivale a traza sin errores
        if (numeric["stderr"] > 0).any():
            stderr = tuple(float(v) for v in numeric["stderr"])
    n_trials = int(numeric["n_trials"].max()) if "n_trials" in numeric else 0

    try:
        return DecayTrace(
            delays=tuple(float(v) for v in numeric["delay_us"]),
            populations=tuple(float(v) for v in numeric["population"]),
            stderr=stderr,
            n_trials=max(n_trials, 0),
        )
    except ValueError as exc:
        raise InputError(f"invalid trace: {exc}") from exc
