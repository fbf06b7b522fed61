import math
from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from atompol.core import CONSTANTS, Measurement
from atompol.velocimetry import (SourceConditions, bragg_angle, bragg_velocity, combine,
                                 doppler_velocity, mixture_correction, speed_ratio_correction,
                                 supersonic_prediction)

THETA = Measurement(79.62e-6, 0.63e-6)
M_LI7 = CONSTANTS.mass("li7")


def quoted(m: Measurement, value, sigma, digit=0.1):
    """Agreement to the last quoted digit, plus or minus one unit."""
    return abs(m.value - value) <= digit + 1e-9 and abs(m.sigma - sigma) <= digit + 1e-9


class TestBragg:
    def test_reference_value(self):
        # u = 1065.0 +/- 8.4 m/s for theta_B = 79.62 +/- 0.63 urad
        assert quoted(bragg_velocity(THETA), 1065.0, 8.4)

    def test_direct_formula(self):
        u = bragg_velocity(THETA, wavelength=671e-9, mass=M_LI7)
        assert u.value == pytest.approx(CONSTANTS.planck / (M_LI7 * THETA.value * 671e-9), rel=1e-15)
        assert u.relative == pytest.approx(THETA.relative, rel=1e-14)

    @given(st.floats(min_value=200.0, max_value=5000.0))
    def test_round_trip(self, u):
        assert bragg_velocity(Measurement(bragg_angle(u))).value == pytest.approx(u, rel=1e-14)

    @given(st.floats(min_value=1e-6, max_value=1e-3))
    def test_reciprocal(self, theta):
        a = bragg_velocity(Measurement(theta))
        b = bragg_velocity(Measurement(2 * theta))
        assert b.value == pytest.approx(a.value / 2, rel=1e-15)
        assert a.value * theta == pytest.approx(b.value * 2 * theta, rel=1e-15)

    @pytest.mark.parametrize("theta", [0.0, -1e-5])
    def test_nonpositive(self, theta):
        with pytest.raises(ValueError):
            bragg_velocity(Measurement(theta))


class TestDoppler:
    def test_shift_for_reference_velocity(self):
        # Delta nu = u / lambda = 1066.4 / 671e-9 Hz
        shift = 1066.4 / 671e-9
        assert shift == pytest.approx(1.589e9, abs=0.0005e9)
        assert doppler_velocity(Measurement(shift), 671e-9).value == pytest.approx(1066.4, rel=1e-14)

    def test_zero(self):
        assert doppler_velocity(Measurement(0.0)).value == 0.0

    @given(st.floats(min_value=1e6, max_value=1e10))
    def test_linear(self, nu):
        a = doppler_velocity(Measurement(nu, 0.01 * nu))
        b = doppler_velocity(Measurement(2 * nu, 0.02 * nu))
        assert b.value == pytest.approx(2 * a.value, rel=1e-15)
        assert b.sigma == pytest.approx(2 * a.sigma, rel=1e-15)

    def test_negative(self):
        with pytest.raises(ValueError):
            doppler_velocity(Measurement(-1.0))


class TestSupersonic:
    def test_pure_argon(self):
        # u = 1056.7 +/- 5.5 m/s from sqrt(5 kB T0 / m_Ar) at 1073 +/- 11 K
        assert quoted(supersonic_prediction(SourceConditions.pure_argon()), 1056.7, 5.5)

    def test_corrected(self):
        # u = 1073.0 +/- 5.6 m/s with all three corrections
        assert quoted(supersonic_prediction(SourceConditions()), 1073.0, 5.6)

    def test_correction_sizes(self):
        src = SourceConditions()
        assert speed_ratio_correction(src) == pytest.approx(0.0109, abs=5e-5)
        assert mixture_correction(src) == pytest.approx(0.0021, abs=5e-5)

    def test_mixture_from_masses(self):
        src = SourceConditions()
        x = 0.86 / (167.0 + 0.86)
        m_ar, m_li = CONSTANTS.mass("ar"), M_LI7
        assert mixture_correction(src) == pytest.approx(
            math.sqrt(m_ar / (x * m_li + (1 - x) * m_ar)) - 1, rel=1e-14)
        assert mixture_correction(replace(src, mixture_fraction=0.005)) == 0.005

    def test_sqrt_temperature_law(self):
        a = supersonic_prediction(SourceConditions.pure_argon(Measurement(300.0, 3.0)))
        b = supersonic_prediction(SourceConditions.pure_argon(Measurement(1200.0, 12.0)))
        assert b.value == pytest.approx(2 * a.value, rel=1e-15)

    @given(st.floats(min_value=300.0, max_value=1500.0), st.floats(min_value=1.0, max_value=200.0))
    def test_monotone_in_temperature(self, t0, dt):
        lo = supersonic_prediction(SourceConditions(Measurement(t0, 10.0)))
        hi = supersonic_prediction(SourceConditions(Measurement(t0 + dt, 10.0)))
        assert hi.value > lo.value

    @given(st.floats(min_value=0.0, max_value=0.1), st.floats(min_value=1e-4, max_value=0.05))
    def test_monotone_in_slip(self, slip, d):
        lo = supersonic_prediction(SourceConditions(slip_fraction=slip))
        hi = supersonic_prediction(SourceConditions(slip_fraction=slip + d))
        assert hi.value > lo.value

    def test_speed_ratio_correction_vanishes(self):
        assert speed_ratio_correction(SourceConditions(argon_speed_ratio=math.inf)) == 0.0
        values = [speed_ratio_correction(SourceConditions(argon_speed_ratio=s))
                  for s in (5.0, 50.0, 500.0, 5e4)]
        assert values == sorted(values, reverse=True) and values[-1] < 1e-9

    @pytest.mark.parametrize("kw", [dict(nozzle_temperature=Measurement(0.0)),
                                    dict(carrier_pressure=0.0), dict(argon_speed_ratio=1.0)])
    def test_invalid_source(self, kw):
        with pytest.raises(ValueError):
            SourceConditions(**kw)

    def test_dict_round_trip(self):
        src = SourceConditions(Measurement(1000.0, 7.0), slip_fraction=0.01)
        assert SourceConditions.from_dict(src.to_dict()) == src


class TestCombine:
    def test_reference_combination(self):
        # {1066.4 +/- 8.0, 1065.0 +/- 8.4} -> 1065.7 +/- 5.8 m/s
        assert quoted(combine([Measurement(1066.4, 8.0), Measurement(1065.0, 8.4)]), 1065.7, 5.8)

    def test_single(self):
        m = Measurement(1066.4, 8.0)
        assert combine([m]) == m

    def test_theory_pulls_upward(self):
        # independent inverse-variance arithmetic
        values, sigmas = [1066.4, 1065.0, 1073.0], [8.0, 8.4, 5.6]
        w = [1 / s**2 for s in sigmas]
        expected = sum(wi * v for wi, v in zip(w, values)) / sum(w)
        got = combine([Measurement(v, s) for v, s in zip(values, sigmas)])
        assert got.value == pytest.approx(expected, rel=1e-14)
        assert 1065.7 < got.value < 1073.0

    @given(st.lists(st.tuples(st.floats(500, 2000), st.floats(0.1, 50)), min_size=2, max_size=6))
    def test_sigma_shrinks(self, pairs):
        ms = [Measurement(v, s) for v, s in pairs]
        assert combine(ms).sigma < min(m.sigma for m in ms)
