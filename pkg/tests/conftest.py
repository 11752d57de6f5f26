"""Fixtures compartidas"""

import json

import numpy as np
import pytest

from qpump.models.schemas import BathParams, DecayParams, DecayTrace, DeviceParams
from qpump.services.analytic import decay_curve

READOUT_GRID = tuple(float(5 * k) for k in range(30))


@pytest.fixture
def device() -> DeviceParams:
    return DeviceParams(preset="deviceA")


@pytest.fixture
def reference_decay() -> DecayParams:
    return DecayParams(n_avg=2.5, t1qp=23.0, t1r=55.0)


@pytest.fixture
def plain_bath() -> BathParams:
    """Baño sin resolución en energía, tasas por defecto"""
    return BathParams(gamma_in=1.0 / 120.0, gamma_out=1.0 / 300.0, delta_e=1.46, energy_resolved=False)


@pytest.fixture
def resolved_bath() -> BathParams:
    return BathParams(gamma_in=1.0 / 150.0, gamma_out=1.0 / 300.0, delta_e=1.46)


@pytest.fixture
def make_trace():
    def _make(n_avg: float, t1qp: float, t1r: float, grid=READOUT_GRID) -> DecayTrace:
        t = np.asarray(grid, dtype=float)
        return DecayTrace(
            delays=tuple(grid),
            populations=tuple(float(p) for p in decay_curve(t, n_avg, t1qp, t1r)),
        )

    return _make


@pytest.fixture
def write_config(tmp_path):
    """Escribe un documento de configuración y retorna su ruta"""

    def _write(document: dict, name: str = "config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(document), encoding="utf-8")
        return path

    return _write
