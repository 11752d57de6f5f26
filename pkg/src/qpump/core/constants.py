"""
QPUMP - Unit conversion constants

Convención de unidades: energías como E/h en GHz, tiempos en μs,
tasas en μs⁻¹, temperaturas en K.
"""

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class Constants:
    """CODATA-derived conversions"""

    kb_over_h: float = 20.8366  # GHz/K
    mev_to_ghz: float = 241.799  # GHz/meV
    # E/h en GHz -> tasa angular E/ħ en μs⁻¹
    rate_scale: float = 2.0 * math.pi * 1.0e3


CONSTANTS = Constants()
