"""Fórmulas cerradas: densidad de estados, ley de decaimiento, baño, térmico y flujo"""

import math

import numpy as np
import pytest

from qpump.core.error_handler import DomainError
from qpump.models.schemas import BathParams, DecayParams, DeviceParams, QpDistribution
from qpump.services.analytic import (
    ThermalModel,
    bessel_k0,
    decay_population,
    energy_estimate,
    flux_factor,
    log_thermal_rate,
    me_small,
    mean_nqp,
    nu,
    one_over_e_time,
    poisson_steady,
    qubit_freq,
    resolved_steady_mean,
    t1qp_flux,
    thermal_rate,
    total_t1,
    xqp_upper_bound,
)


class TestDensityOfStates:
    def test_twice_the_gap(self):
        assert nu(2.0, 1.0) == pytest.approx(2.0 / math.sqrt(3.0), rel=1e-12)

    def test_near_the_edge(self):
        assert nu(1.0 + 1e-6, 1.0) == pytest.approx(707.1, rel=1e-3)

    def test_far_from_the_edge(self):
        assert nu(100.0, 1.0) == pytest.approx(1.00005, abs=1e-6)

    def test_at_gap_is_domain_error(self):
        with pytest.raises(DomainError):
            nu(1.0, 1.0)

    def test_monotone_and_above_one(self):
        energies = 1.0 + np.geomspace(1e-8, 1e3, 1000)
        values = np.array([nu(float(e), 1.0) for e in energies])
        assert np.all(values >= 1.0)
        assert np.all(np.diff(values) < 0)


class TestDecayLaw:
    def test_starts_at_one(self, reference_decay):
        assert decay_population(0.0, reference_decay) == 1.0

    def test_scalar_returns_float(self, reference_decay):
        assert isinstance(decay_population(10.0, reference_decay), float)

    def test_zero_quasiparticles_is_exponential(self):
        p = DecayParams(n_avg=0.0, t1qp=23.0, t1r=55.0)
        assert decay_population(55.0, p) == pytest.approx(math.exp(-1.0), rel=1e-14)

    def test_negative_time_rejected(self, reference_decay):
        with pytest.raises(DomainError):
            decay_population(-1.0, reference_decay)

    def test_long_time_tail(self, reference_decay):
        # Para t >> T̃1qp: e^{−n}·e^{−t/T1R}
        t = 2000.0
        expected = math.exp(-reference_decay.n_avg) * math.exp(-t / reference_decay.t1r)
        assert decay_population(t, reference_decay) == pytest.approx(expected, rel=1e-12)

    def test_one_over_e_time(self, reference_decay):
        t1e = one_over_e_time(reference_decay)
        assert decay_population(t1e, reference_decay) == pytest.approx(math.exp(-1.0), abs=1e-9)
        assert 5.0 < t1e < 15.0

    def test_one_over_e_time_exponential(self):
        assert one_over_e_time(DecayParams(n_avg=0.0, t1qp=1.0, t1r=40.0)) == pytest.approx(40.0, rel=1e-8)

    def test_log_decay_rate_falls_to_residual_rate(self, reference_decay):
        t = np.linspace(0.0, 300.0, 601)
        rate = -np.diff(np.log(decay_population(t, reference_decay))) / np.diff(t)
        assert np.all(np.diff(rate) < 0)
        assert rate[-1] == pytest.approx(1.0 / reference_decay.t1r, rel=1e-4)

    def test_fewer_slower_quasiparticles_decay_later(self):
        early = one_over_e_time(DecayParams(n_avg=2.2, t1qp=20.0, t1r=55.0))
        late = one_over_e_time(DecayParams(n_avg=0.5, t1qp=7.0, t1r=55.0))
        assert early < late
        assert late > 2.0 * early


class TestBath:
    def test_poisson_steady(self):
        steady = poisson_steady(1.0 / 150.0, 1.0 / 300.0)
        assert steady.mean == pytest.approx(2.0)
        assert steady.probs.sum() == pytest.approx(1.0, abs=1e-14)
        assert np.dot(np.arange(steady.probs.size), steady.probs) == pytest.approx(2.0, rel=1e-12)

    def test_empty_bath_is_point_mass(self):
        steady = poisson_steady(0.0, 1.0)
        assert steady.probs[0] == 1.0
        assert steady.mean == 0.0

    def test_truncation_rejected(self):
        with pytest.raises(DomainError, match="truncates"):
            poisson_steady(150.0, 1.0, n_max=200)

    def test_mean_recovery(self):
        t = np.array([0.0, 300.0, 1e6])
        values = mean_nqp(t, 0.6, 2.0 / 300.0, 1.0 / 300.0)
        assert values[0] == pytest.approx(0.6)
        assert values[1] == pytest.approx(0.6 * math.exp(-1) + 2.0 * (1 - math.exp(-1)))
        assert values[2] == pytest.approx(2.0)

    def test_resolved_mean_reduces_without_resolution(self, device):
        bath = BathParams(gamma_in=0.01, gamma_out=0.005, delta_e=1.46, energy_resolved=False)
        assert resolved_steady_mean(bath, device) == pytest.approx(2.0)

    def test_resolved_mean_exceeds_plain_mean(self, device, resolved_bath):
        # Cuasipartículas lentas (cerca del borde) se acumulan
        mean = resolved_steady_mean(resolved_bath, device)
        assert resolved_bath.steady_mean < mean < 2.0 * resolved_bath.steady_mean

    def test_energy_estimate(self):
        # n_before/n_after = 2: δE = Δ/8
        assert energy_estimate(2.0, 1.0, 56.34) == pytest.approx(56.34 / 8.0)
        with pytest.raises(DomainError):
            energy_estimate(0.5, 1.0, 56.34)

    def test_xqp_upper_bound(self):
        assert xqp_upper_bound(2.0, 1e8) == pytest.approx(2e-8)


class TestBessel:
    def test_k0_at_one(self):
        assert bessel_k0(1.0) == pytest.approx(0.42102443824, rel=1e-10)

    def test_k0_small_argument(self):
        assert bessel_k0(1e-3) == pytest.approx(-math.log(5e-4) - np.euler_gamma, abs=1e-4)

    def test_k0_requires_positive_argument(self):
        with pytest.raises(DomainError):
            bessel_k0(0.0)


class TestThermal:
    def test_plateau_below_100mk(self, device):
        model = ThermalModel(t1ne=55.0, device=device)
        for temp in (0.02, 0.05, 0.1):
            assert total_t1(temp, model, device.omega0) == pytest.approx(55.0, rel=0.01)

    def test_monotone_nonincreasing(self, device):
        model = ThermalModel(t1ne=55.0, device=device)
        temps = np.arange(0.02, 0.351, 0.01)
        t1 = [total_t1(float(temp), model, device.omega0) for temp in temps]
        assert all(b <= a for a, b in zip(t1, t1[1:]))
        assert t1[-1] < 0.5 * t1[0]

    def test_rate_at_100mk(self, device):
        assert thermal_rate(0.1, device, device.omega0) == pytest.approx(7.72e-7, rel=0.01)

    def test_log_rate_is_stable_at_low_temperature(self, device):
        value = log_thermal_rate(0.005, device, device.omega0)
        assert math.isfinite(value)
        assert thermal_rate(0.005, device, device.omega0) == 0.0 or value < -100

    def test_zero_matrix_element_disables_thermal_channel(self):
        device = DeviceParams(preset="deviceA", me_large=0.0)
        assert thermal_rate(0.3, device, device.omega0) == 0.0

    def test_corrupted_bessel_changes_rate(self, device):
        exact = log_thermal_rate(0.2, device, device.omega0)
        corrupted = log_thermal_rate(0.2, device, device.omega0, k0e=lambda x: 2.0 * math.exp(x) * bessel_k0(x))
        assert corrupted - exact == pytest.approx(math.log(2.0), rel=1e-9)

    def test_temperature_must_be_positive(self, device):
        with pytest.raises(DomainError):
            thermal_rate(0.0, device, device.omega0)


class TestFlux:
    def test_frequency_minimum_at_zero(self, device):
        assert qubit_freq(0.0, device) == pytest.approx(5.37)
        assert qubit_freq(0.002, device) > 5.37

    def test_zero_flux_returns_t1qp0(self, device):
        assert t1qp_flux(0.0, 23.0, device).t1qp_f == pytest.approx(23.0, rel=1e-14)

    def test_symmetric(self, device):
        for f in (0.0005, 0.0019, 0.003):
            assert t1qp_flux(f, 23.0, device).t1qp_f == pytest.approx(t1qp_flux(-f, 23.0, device).t1qp_f, rel=1e-14)

    def test_bracket_at_matched_matrix_elements(self, device):
        f = 0.0019
        factor, _ = flux_factor(f, device)
        bracket = factor / math.sqrt(device.omega0 / qubit_freq(f, device))
        assert bracket == pytest.approx(1.54, rel=1e-12)

    def test_uniform_distribution_divides_by_three(self, device):
        f = 0.0019
        factor, _ = flux_factor(f, device, QpDistribution.UNIFORM)
        bracket = factor / math.sqrt(device.omega0 / qubit_freq(f, device))
        assert bracket == pytest.approx(1.0 + 0.54 / 3.0, rel=1e-12)

    def test_out_of_table_is_clamped(self, device):
        value, clamped = me_small(0.01, device)
        assert clamped
        assert value == device.me_small_table[-1][1]
        assert t1qp_flux(0.01, 23.0, device).clamped

    def test_interpolation(self, device):
        value, clamped = me_small(0.00095, device)
        assert not clamped
        assert value == pytest.approx(0.120)
