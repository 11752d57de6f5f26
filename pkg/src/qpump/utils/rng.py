"""
QPUMP - Random streams
Generadores por contador (Philox) indexados por (semilla, ensayo, bifurcación):
el resultado de un ensayo no depende del orden de ejecución ni del número de workers.
"""

import math
from typing import Tuple

import numpy as np

BLOCK_SIZE = 64


def substream(seed: int, trial: int, fork: int = 0) -> np.random.Generator:
    """Generador determinista para un par (ensayo, bifurcación)"""
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(trial, fork))
    return np.random.Generator(np.random.Philox(sequence))


class UniformStream:
    """Uniformes en (0, 1) servidos por bloques desde un substream"""

    __slots__ = ("key", "_generator", "_block", "_index")

    def __init__(self, seed: int, trial: int, fork: int = 0):
        self.key: Tuple[int, int, int] = (seed, trial, fork)
        self._generator = substream(seed, trial, fork)
        self._block = None
        self._index = BLOCK_SIZE

    def _refill(self) -> None:
        raw = self._generator.random(BLOCK_SIZE)
        # random() cae en [0, 1): se vuelven a sortear los ceros
        zeros = raw == 0.0
        while zeros.any():
            raw[zeros] = self._generator.random(int(zeros.sum()))
            zeros = raw == 0.0
        # 1 - U con U en (0, 1) sigue en (0, 1)
        self._block = (1.0 - raw).tolist()
        self._index = 0

    def uniform(self) -> float:
        if self._index >= BLOCK_SIZE:
            self._refill()
        value = self._block[self._index]
        self._index += 1
        return value

    def exponential(self, mean: float) -> float:
        return -mean * math.log(self.uniform())

    def bernoulli(self, probability: float) -> bool:
        return self.uniform() <= probability

    def fork(self, fork: int) -> "UniformStream":
        seed, trial, _ = self.key
        return UniformStream(seed, trial, fork)
