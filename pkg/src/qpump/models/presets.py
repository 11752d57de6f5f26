"""
QPUMP - Device presets
Constantes de dispositivo; todo en GHz salvo las razones adimensionales
"""

from typing import Any, Dict

# (f, |<1|sin(φs/2)|0>|). El último punto es una extrapolación, no un dato medido.
DEFAULT_ME_SMALL_TABLE = ((0.0, 0.0), (0.0019, 0.240), (0.004, 0.30))

_DEVICE_A: Dict[str, Any] = {
    "omega0": 5.37,
    # 2·Ip·Φ0/h con Ip ≈ 0.24 μA; valor asumido, no medido
    "eps_slope": 1000.0,
    "ej_large": 210.0,
    "gap_mev": 0.233,
    "me_large": 0.240,
    "alpha": 0.54,
    "me_small_table": DEFAULT_ME_SMALL_TABLE,
}

DEVICE_PRESETS: Dict[str, Dict[str, Any]] = {
    "deviceA": _DEVICE_A,
    "deviceB": {**_DEVICE_A, "omega0": 4.7},
    "deviceC": {**_DEVICE_A, "omega0": 3.7},
}

DEFAULT_PULSE_COUNTS = (0, 1, 2, 5, 10, 20, 40)
DEFAULT_RECOVERY_DELAYS = (0.0, 10.0, 25.0, 50.0, 100.0, 200.0, 400.0, 700.0, 1000.0, 1500.0)
DEFAULT_READOUT_GRID = tuple(float(5 * k) for k in range(30))
DEFAULT_TEMPERATURES = tuple(round(0.02 + 0.01 * k, 2) for k in range(34))
DEFAULT_FLUX_GRID = tuple(round(-0.004 + 0.0004 * k, 4) for k in range(21))
