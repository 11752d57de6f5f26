"""Flujos uniformes por bloques"""

import math

import numpy as np
import pytest

from qpump.utils.rng import BLOCK_SIZE, UniformStream


class _ScriptedGenerator:
    def __init__(self, *blocks):
        self.blocks = [np.asarray(b, dtype=float) for b in blocks]

    def random(self, size):
        block = self.blocks.pop(0)
        assert block.size == size
        return block.copy()


def _stream_with(*blocks) -> UniformStream:
    stream = UniformStream(0, 0)
    stream._generator = _ScriptedGenerator(*blocks)
    return stream


class TestUniformStream:
    def test_values_in_open_interval(self):
        stream = UniformStream(5, 1)
        values = np.array([stream.uniform() for _ in range(4 * BLOCK_SIZE)])
        assert np.all((values > 0.0) & (values < 1.0))

    def test_zero_draws_are_replaced(self):
        first = np.full(BLOCK_SIZE, 0.5)
        first[0] = first[5] = 0.0
        stream = _stream_with(first, [0.0, 0.25], [0.5])
        values = [stream.uniform() for _ in range(BLOCK_SIZE)]
        assert values[0] == 0.5
        assert values[5] == 0.75
        assert min(values) > 0.0

    @pytest.mark.parametrize("raw", [2.0**-53, 1.0 - 2.0**-53])
    def test_exponential_positive_and_finite(self, raw):
        stream = _stream_with(np.full(BLOCK_SIZE, raw))
        draw = stream.exponential(2.0)
        assert 0.0 < draw < math.inf

    def test_same_key_same_sequence(self):
        a, b = UniformStream(3, 7, 1), UniformStream(3, 7, 1)
        assert [a.uniform() for _ in range(100)] == [b.uniform() for _ in range(100)]

    def test_fork_keeps_trial(self):
        stream = UniformStream(3, 7)
        branch = stream.fork(4)
        assert branch.key == (3, 7, 4)
        assert branch.uniform() != stream.uniform()

    def test_bernoulli_edges(self):
        stream = UniformStream(8, 0)
        assert all(stream.bernoulli(1.0) for _ in range(50))
        assert not any(stream.bernoulli(0.0) for _ in range(50))
