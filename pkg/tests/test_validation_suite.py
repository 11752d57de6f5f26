"""Verificaciones cruzadas de la suite de validación"""

import math

import numpy as np
import pytest

from qpump.services.analytic import bessel_k0e
from qpump.services.validation_suite import (
    CheckResult,
    _k0e_quadrature,
    _pointwise_agreement,
    check_bessel_k0,
    check_fit_roundtrip,
    check_flux_identity,
    check_master_equation,
    check_mixture_identity,
    check_montecarlo_frozen_bath,
    check_thermal_plateau,
    check_two_pi_control,
    results_table,
)


def test_mixture_identity():
    result = check_mixture_identity()
    assert result.passed, result.detail


def test_master_equation():
    result = check_master_equation()
    assert result.passed, result.detail


def test_bessel_k0():
    assert check_bessel_k0().passed


@pytest.mark.parametrize("x", [0.05, 1.0, 30.0])
def test_k0_quadrature_reference(x):
    assert _k0e_quadrature(x) == pytest.approx(bessel_k0e(x), rel=1e-10)


def test_k0_quadrature_known_value():
    assert _k0e_quadrature(1.0) * math.exp(-1.0) == pytest.approx(0.42102443824, rel=1e-10)


def test_bessel_k0_detects_corruption():
    result = check_bessel_k0(k0e=lambda x: bessel_k0e(x) * (1.0 + 1e-6))
    assert not result.passed
    assert result.metric == pytest.approx(1e-6, rel=1e-3)


def test_thermal_plateau(device):
    assert check_thermal_plateau(device).passed


def test_flux_identity(device):
    result = check_flux_identity(device)
    assert result.passed, result.detail


def test_fit_roundtrip():
    result = check_fit_roundtrip()
    assert result.passed, f"worst relative error {result.metric:.2e}"


@pytest.mark.slow
def test_montecarlo_frozen_bath_small(device):
    result = check_montecarlo_frozen_bath(device, n_trials=2000, seed=5, n_se=5.0)
    assert result.passed, f"max z {result.metric:.2f}"
    assert math.isfinite(result.metric)


@pytest.mark.slow
def test_two_pi_control_small(device):
    result = check_two_pi_control(device, n_trials=2000, seed=9, n_se=5.0)
    assert result.passed, result.detail
    assert 0.0 <= result.metric < result.threshold


def test_results_table():
    table = results_table(
        [
            CheckResult("a", True, 0.1, 1.0, "ok"),
            CheckResult("b", False, 2.0, 1.0, "bad"),
        ]
    )
    assert table["status"].tolist() == ["PASS", "FAIL"]
    assert list(table.columns) == ["check", "status", "metric", "threshold", "elapsed_s", "detail"]


class TestPointwiseAgreement:
    def test_every_point_must_lie_within_bound(self):
        expected = np.full(30, 0.5)
        sigma = math.sqrt(0.25 / 10000)
        observed = expected.copy()
        observed[7] += 3.2 * sigma
        passed, z_max, outside = _pointwise_agreement(observed, expected, 10000, 3.0)
        assert not passed
        assert z_max == pytest.approx(3.2)
        assert outside == 1

    def test_all_points_inside(self):
        expected = np.linspace(0.9, 0.1, 12)
        sigma = np.sqrt(expected * (1 - expected) / 5000)
        observed = expected + 2.9 * sigma * np.where(np.arange(12) % 2, 1.0, -1.0)
        passed, z_max, outside = _pointwise_agreement(observed, expected, 5000, 3.0)
        assert passed
        assert z_max == pytest.approx(2.9)
        assert outside == 0
