import math
import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atompol.beam import average_fringe_numeric
from atompol.core import Measurement
from atompol.fringes import (FringeFit, FringeRecording, FringeTruth, SequencePlan,
                             bracket_covariance, expected_counts, fit_recording, fit_sequence,
                             grating_phase, phase_shift_estimates, read_sequence, synthesize,
                             visibility_estimates, wrap_phase, write_sequence)

TRUTH = FringeTruth(k=1.387e-4, s_parallel=8.0)
PLAN = SequencePlan()


def fake_fit(voltage, phase, t, sigma=0.003, vis=0.6):
    cov = np.zeros((5, 5))
    cov[1, 1] = 1e-6
    return FringeFit(intensity=36000.0, visibility=vis, a=wrap_phase(phase), b=0.05, c=0.0,
                     covariance=cov, mean_phase=Measurement(phase, sigma), chi2_per_dof=1.0,
                     voltage=voltage, start_time=t)


class TestPhaseHelpers:
    @given(st.floats(min_value=-1e3, max_value=1e3))
    def test_wrap_range(self, phi):
        w = wrap_phase(phi)
        assert -math.pi < w <= math.pi
        assert math.isclose(math.cos(w), math.cos(phi), abs_tol=1e-9)

    def test_wrap_pi(self):
        assert wrap_phase(-math.pi) == math.pi

    def test_grating_phase_53nm(self):
        k_l = 2 * math.pi / 671e-9
        assert round(grating_phase(0.0, 0.0, 53e-9, 1, k_l), 2) == 0.99

    def test_grating_phase_zero_and_order(self):
        k_l = 2 * math.pi / 671e-9
        assert grating_phase(0.0, 0.0, 0.0, 1, k_l) == 0.0
        one = grating_phase(1e-8, 3e-9, 2e-8, 1, k_l)
        assert grating_phase(1e-8, 3e-9, 2e-8, 2, k_l) == 2 * one

    @pytest.mark.parametrize("order", [0, 1.5, -1])
    def test_grating_phase_bad_order(self, order):
        with pytest.raises(ValueError):
            grating_phase(0, 0, 0, order, 1.0)


class TestRecordings:
    def test_validation(self):
        with pytest.raises(ValueError):
            FringeRecording(np.array([1, -1]))
        with pytest.raises(ValueError):
            FringeRecording(np.array([1, 1]), dwell=0.0)

    def test_csv_round_trip(self, tmp_path):
        rec = synthesize(PLAN, TRUTH, seed=4)[3]
        path = rec.to_csv(tmp_path / "r.csv")
        head = path.read_text().splitlines()[:5]
        assert head == [f"# V0={rec.voltage!r}", "# dwell_s=0.36", f"# t0_s={rec.start_time!r}",
                        f"# index={rec.index}", "channel,counts"]
        back = FringeRecording.from_csv(path)
        assert np.array_equal(back.counts, rec.counts)
        assert (back.voltage, back.dwell, back.start_time, back.index) == \
            (rec.voltage, rec.dwell, rec.start_time, rec.index)

    def test_sequence_round_trip(self, tmp_path):
        recs = synthesize(replace(PLAN, recordings=6), TRUTH, seed=1)
        manifest = write_sequence(recs, tmp_path / "seq")
        back = read_sequence(manifest)
        assert [r.index for r in back] == [r.index for r in recs]
        assert all(np.array_equal(a.counts, b.counts) for a, b in zip(recs, back))


class TestPlan:
    def test_default_schedule(self):
        v = PLAN.voltages()
        assert v.size == 45
        assert np.all(v[0::2] == 0)
        assert np.array_equal(v[1::2], 10.0 * np.arange(2, 45, 2))

    def test_no_trailing_reference(self):
        assert replace(PLAN, trailing_reference=False).voltages().size == 44

    @pytest.mark.parametrize("kw", [dict(recordings=2), dict(channels=10), dict(dwell=0.0),
                                    dict(scatter_rms=-0.1)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SequencePlan(**kw)

    @pytest.mark.parametrize("kw", [dict(k=-1.0), dict(s_parallel=1.0), dict(visibility=1.5),
                                    dict(count_rate=0.0)])
    def test_invalid_truth(self, kw):
        base = dict(k=1e-4, s_parallel=8.0)
        base.update(kw)
        with pytest.raises(ValueError):
            FringeTruth(**base)


class TestSynthesis:
    def test_zero_visibility_is_flat_poisson(self):
        plan = replace(PLAN, recordings=3, flux_noise=0.0)
        recs = synthesize(plan, replace(TRUTH, visibility=0.0), seed=2)
        counts = np.concatenate([r.counts for r in recs]).astype(float)
        mu = TRUTH.count_rate * plan.dwell
        assert abs(counts.mean() - mu) < 5 * math.sqrt(mu / counts.size)
        assert counts.var() == pytest.approx(mu, rel=0.1)

    def test_noiseless_contrast(self):
        rec = synthesize(replace(PLAN, recordings=3), TRUTH, seed=0, noiseless=True)[0]
        assert rec.counts.max() / rec.counts.min() == pytest.approx((1 + 0.62) / (1 - 0.62), rel=2e-3)

    def test_deterministic_and_order_independent(self):
        a = synthesize(PLAN, TRUTH, seed=11)
        b = synthesize(PLAN, TRUTH, seed=11)
        short = synthesize(replace(PLAN, recordings=9), TRUTH, seed=11)
        assert all(np.array_equal(x.counts, y.counts) for x, y in zip(a, b))
        assert all(np.array_equal(x.counts, y.counts) for x, y in zip(a[:9], short[:9]))
        c = synthesize(PLAN, TRUTH, seed=12)
        assert not np.array_equal(a[0].counts, c[0].counts)

    def test_low_flux_rejected(self):
        with pytest.raises(ValueError):
            synthesize(PLAN, replace(TRUTH, count_rate=10.0))

    def test_drift_over_five_minutes(self):
        plan = replace(PLAN, recordings=3, voltage_step=0.0, period=300.0, scatter_rms=0.0)
        fits = [fit_recording(r) for r in synthesize(plan, TRUTH, seed=5)[:2]]
        diff = fits[1].mean_phase.value - fits[0].mean_phase.value
        sigma = math.hypot(fits[0].mean_phase.sigma, fits[1].mean_phase.sigma)
        assert diff == pytest.approx(0.0375, abs=4 * sigma)


class TestFitRecording:
    def test_noiseless_exact(self):
        plan = replace(PLAN, recordings=3)
        rec = synthesize(plan, TRUTH, seed=0, noiseless=True)[0]
        fit = fit_recording(rec)
        mu = TRUTH.count_rate * plan.dwell
        assert fit.intensity == pytest.approx(mu, rel=1e-8)
        assert fit.visibility == pytest.approx(0.62, rel=1e-8)
        assert fit.a == pytest.approx(plan.initial_phase, abs=1e-8)
        assert fit.b == pytest.approx(plan.ramp_b, abs=1e-8)
        assert fit.c == pytest.approx(plan.ramp_c, abs=1e-8)

    @pytest.mark.parametrize("delta", [0.3, 2.0, -2.9, 5.0])
    def test_equivariant_in_phase(self, delta):
        plan = replace(PLAN, recordings=3)
        base = expected_counts(TRUTH, plan, 0.4, 0.0)
        moved = expected_counts(TRUTH, plan, 0.4 + delta, 0.0)
        f0 = fit_recording(FringeRecording(base))
        f1 = fit_recording(FringeRecording(moved))
        assert wrap_phase(f1.a - f0.a - delta) == pytest.approx(0.0, abs=1e-8)
        for name in ("intensity", "visibility", "b", "c"):
            assert getattr(f1, name) == pytest.approx(getattr(f0, name), rel=1e-7, abs=1e-12)

    def test_fixed_ramp_mode(self):
        rec = synthesize(replace(PLAN, recordings=3), TRUTH, seed=0, noiseless=True)[1]
        fit = fit_recording(rec, fixed_ramp=(PLAN.ramp_b, PLAN.ramp_c))
        assert fit.fixed_ramp and fit.b == PLAN.ramp_b and fit.c == PLAN.ramp_c
        vis, phase = average_fringe_numeric(TRUTH.k * 400.0, TRUTH.s_parallel).__dict__.values()
        assert fit.visibility == pytest.approx(0.62 * vis, rel=1e-8)
        assert fit.a == pytest.approx(wrap_phase(PLAN.initial_phase + PLAN.drift_rate * 3 + phase),
                                      abs=1e-8)

    def test_too_few_channels(self):
        with pytest.raises(ValueError):
            fit_recording(FringeRecording(np.full(40, 100)))

    def test_sigma_at_nominal_conditions(self):
        fits = fit_sequence(synthesize(PLAN, TRUTH, seed=3))
        zero = [f.mean_phase.sigma for f in fits if f.voltage == 0]
        assert 1e-3 <= np.median(zero) <= 4e-3
        top = fits[-2]
        assert top.voltage == 440.0
        assert 0.01 <= top.mean_phase.sigma <= 0.05

    def test_visibility_bounded(self):
        for fit in fit_sequence(synthesize(PLAN, TRUTH, seed=8)):
            assert 0.0 <= fit.visibility <= 1.0
            assert fit.mean_phase.sigma > 0


class TestEstimator:
    def test_linear_drift_cancels(self):
        fits = [fake_fit(0.0 if i % 2 == 0 else 10.0 * i, 0.3 + 0.0125 * i, 180.0 * i)
                for i in range(9)]
        for _, m in phase_shift_estimates(fits):
            assert m.value == pytest.approx(0.0, abs=1e-15)

    @given(st.floats(min_value=-3, max_value=3), st.floats(min_value=-0.5, max_value=0.5),
           st.floats(min_value=-1.0, max_value=1.0))
    def test_linear_drift_with_shift(self, offset, rate, shift):
        fits = [fake_fit(0.0 if i % 2 == 0 else 10.0, offset + rate * i + (shift if i % 2 else 0.0),
                         180.0 * i) for i in range(7)]
        for _, m in phase_shift_estimates(fits):
            assert wrap_phase(m.value - shift) == pytest.approx(0.0, abs=1e-9)

    def test_sigma_quadrature(self):
        fits = [fake_fit(0.0, 0.0, 0.0), fake_fit(20.0, 0.1, 1.0, sigma=0.003), fake_fit(0.0, 0.0, 2.0)]
        (_, m), = phase_shift_estimates(fits, scatter_rms=0.033)
        assert round(m.sigma * 1e3, 1) == 33.1

    def test_unbracketed_skipped(self):
        fits = [fake_fit(0.0, 0.0, 0.0), fake_fit(20.0, 0.1, 1.0), fake_fit(0.0, 0.0, 2.0),
                fake_fit(40.0, 0.2, 3.0)]
        with pytest.warns(UserWarning, match="not bracketed"):
            out = phase_shift_estimates(fits)
        assert [v for v, _ in out] == [20.0]

    def test_covariance_shape(self):
        fits = [fake_fit(0.0 if i % 2 == 0 else 10.0 * i, 0.0, float(i)) for i in range(9)]
        pc, vc = bracket_covariance(fits, scatter_rms=0.033)
        assert pc.shape == vc.shape == (4, 4)
        s2 = 0.003**2 + 0.033**2
        assert pc[0, 0] == pytest.approx(1.5 * s2)
        assert pc[0, 1] == pytest.approx(0.25 * s2)
        assert pc[0, 2] == 0.0


@pytest.fixture(scope="module")
def monte_carlo():
    """Estimates over 100 seeds at nominal conditions."""
    voltages = None
    est, vest, truth_phase, truth_vis = [], [], None, None
    for seed in range(100):
        fits = fit_sequence(synthesize(PLAN, TRUTH, seed=seed))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            shifts = phase_shift_estimates(fits, PLAN.scatter_rms)
        vis = visibility_estimates(fits, PLAN.visibility_scatter)
        voltages = np.array([v for v, _ in shifts])
        est.append([(m.value, m.sigma) for _, m in shifts])
        vest.append([(m.value, m.sigma) for _, m in vis])
    est, vest = np.array(est), np.array(vest)
    avg = [average_fringe_numeric(TRUTH.k * v * v, TRUTH.s_parallel) for v in voltages]
    truth_phase = np.array([a.mean_phase for a in avg])
    truth_vis = np.array([a.relative_visibility for a in avg])
    dev = wrap_phase(est[..., 0] - truth_phase)
    return dict(voltages=voltages, dev=dev, sigma=est[..., 1],
                vis_dev=vest[..., 0] - truth_vis, vis_sigma=vest[..., 1])


class TestMonteCarlo:
    def test_unbiased(self, monte_carlo):
        dev, sigma = monte_carlo["dev"], monte_carlo["sigma"]
        assert np.all(np.abs(dev.mean(axis=0)) < 2 * sigma.mean(axis=0))

    def test_pull_distribution(self, monte_carlo):
        pulls = (monte_carlo["dev"] / monte_carlo["sigma"]).ravel()
        assert abs(pulls.mean()) < 0.2
        assert 0.7 <= math.sqrt(np.mean(pulls**2)) <= 1.3

    def test_visibility_pulls(self, monte_carlo):
        pulls = (monte_carlo["vis_dev"] / monte_carlo["vis_sigma"]).ravel()
        assert abs(pulls.mean()) < 0.2
        assert 0.7 <= math.sqrt(np.mean(pulls**2)) <= 1.3

    def test_bracket_covariance_matches_scatter(self, monte_carlo):
        fits = fit_sequence(synthesize(PLAN, TRUTH, seed=0))
        pc, _ = bracket_covariance(fits, PLAN.scatter_rms, PLAN.visibility_scatter)
        empirical = np.cov(monte_carlo["dev"], rowvar=False)
        ratio = np.diag(empirical) / np.diag(pc)
        assert 0.75 < np.median(ratio) < 1.33
        neighbour = np.mean([empirical[i, i + 1] / math.sqrt(empirical[i, i] * empirical[i + 1, i + 1])
                             for i in range(len(pc) - 1)])
        model = np.mean([pc[i, i + 1] / math.sqrt(pc[i, i] * pc[i + 1, i + 1])
                         for i in range(len(pc) - 1)])
        assert neighbour == pytest.approx(model, abs=0.08)
