import numpy as np
import pytest

from photonkit.core import RandomSource, merge_streams
from photonkit.correlate import CorrelationRequest, correlate, normalize_cw
from photonkit.models import ConversionStage, HomInterferometer
from photonkit.simulate import (ChargeModel, DetectorSpec, EmitterSpec, QfcSpec,
                                SimulationError, apply_qfc,
                                background_rate_for_g2_zero, detect,
                                poisson_process, route_hom, run_experiment,
                                simulate_emission)


class TestEmitterSpec:
    def test_pulsed_overlap_rejected(self):
        with pytest.raises(SimulationError):
            EmitterSpec(lifetime=20e-9, mode="pulsed", rep_rate=50e6)

    def test_invalid_lifetime_rejected(self):
        with pytest.raises(SimulationError):
            EmitterSpec(lifetime=0.0)


class TestSimulateEmission:
    def test_zero_duration_empty(self):
        times, lines = simulate_emission(EmitterSpec(), 0.0, RandomSource(1))
        assert times.size == 0 and lines.size == 0

    def test_sorted_and_within_duration(self):
        spec = EmitterSpec(lifetime=1.5e-9, pump_rate=1e8)
        times, _ = simulate_emission(spec, 0.01, RandomSource(2))
        assert np.all(np.diff(times) >= 0)
        assert times[-1] < 0.01

    def test_saturated_waiting_time_is_lifetime(self):
        # pump_rate >> 1/lifetime: waits are dominated by the radiative decay
        lifetime = 1e-9
        spec = EmitterSpec(lifetime=lifetime, pump_rate=1e13)
        times, _ = simulate_emission(spec, 1.1e-3, RandomSource(3))
        waits = np.diff(times)
        n = waits.size
        assert n > 1e6
        # mean wait = 1/pump_rate + lifetime; 3 sigma of the sample mean
        expected = 1e-13 + lifetime
        assert abs(waits.mean() - expected) < 3 * waits.std() / np.sqrt(n)

    def test_recovery_time_matches_ctmc_rate(self):
        # with strong pumping the g2 recovery rate is pump_rate + 1/lifetime
        lifetime = 2e-9
        pump = 2.5e8
        duration = 0.05
        spec = EmitterSpec(lifetime=lifetime, pump_rate=pump)
        times, _ = simulate_emission(spec, duration, RandomSource(4))
        to_a = RandomSource(44).generator().random(times.size) < 0.5
        stream = merge_streams(
            detect(times[to_a], DetectorSpec(), 0, duration, RandomSource(5)),
            detect(times[~to_a], DetectorSpec(), 1, duration, RandomSource(6)))
        h = correlate(stream, CorrelationRequest(0, 1, "full", 100e-12, 30e-9))
        plateau = h.counts[np.abs(h.centers) > 15e-9].mean()
        # fit the dip width via log-linear regression of 1 - g2
        y = 1.0 - h.counts / plateau
        tau_r = 1.0 / (pump + 1.0 / lifetime)
        sel = (np.abs(h.centers) < 3 * tau_r) & (y > 0.05)
        slope = np.polyfit(np.abs(h.centers[sel]), np.log(y[sel]), 1)[0]
        assert -1.0 / slope == pytest.approx(tau_r, rel=0.05)

    def test_two_line_alternation(self):
        cm = ChargeModel(rate_single_capture=2e8, rate_multi_capture=2e7)
        spec = EmitterSpec(lifetime=1.5e-9, pump_rate=1e7, charge_model=cm)
        times, lines = simulate_emission(spec, 0.01, RandomSource(7))
        assert set(np.unique(lines)) == {0, 1}
        # branching 0.5 alternates strictly: no two consecutive same-line
        assert not np.any(np.diff(lines) == 0)

    def test_two_line_branching_fraction(self):
        cm = ChargeModel(rate_single_capture=2e8, rate_multi_capture=2e7,
                         branching=0.3)
        spec = EmitterSpec(lifetime=1.5e-9, pump_rate=1e7, charge_model=cm)
        _, lines = simulate_emission(spec, 0.05, RandomSource(8))
        frac_x2 = np.mean(lines == 1)
        assert frac_x2 == pytest.approx(0.3, abs=0.02)

    def test_determinism(self):
        spec = EmitterSpec(lifetime=1.5e-9, pump_rate=1e7)
        a, _ = simulate_emission(spec, 0.01, RandomSource(42, 5))
        b, _ = simulate_emission(spec, 0.01, RandomSource(42, 5))
        assert np.array_equal(a, b)


class TestBackgroundRate:
    def test_plateau_depth_algebra(self):
        # signal fraction rho gives g2(0) = 1 - rho^2
        rate = background_rate_for_g2_zero(1e6, 0.19)
        rho = 1e6 / (1e6 + rate)
        assert 1 - rho**2 == pytest.approx(0.19, rel=1e-12)

    def test_zero_target_zero_background(self):
        assert background_rate_for_g2_zero(1e6, 0.0) == 0.0


class TestApplyQfc:
    def stage(self, coeff=0.0):
        return QfcSpec(ConversionStage(eta_max=1.0, p_max=1.0,
                                       background_rate_coeff=coeff))

    def test_unit_efficiency_identity(self):
        photons = np.sort(np.random.default_rng(0).uniform(0, 1.0, 1000))
        out, origin = apply_qfc(photons, self.stage(), 1.0, 1.0, RandomSource(1))
        assert np.array_equal(out, photons)
        assert np.all(origin == 0)

    def test_zero_efficiency_background_only(self):
        q = QfcSpec(ConversionStage(eta_max=0.4, background_rate_coeff=1000.0))
        photons = np.linspace(0, 1, 1000)
        out, origin = apply_qfc(photons, q, 0.0, 1.0, RandomSource(2))
        assert np.all(origin == 1)

    def test_binomial_survival(self):
        q = QfcSpec(ConversionStage(eta_max=0.4, p_max=1.0,
                                    background_rate_coeff=0.0))
        n = 10**6
        photons = np.linspace(0, 10, n)
        out, _ = apply_qfc(photons, q, 1.0, 10.0, RandomSource(3))
        sigma = np.sqrt(n * 0.4 * 0.6)
        assert abs(out.size - 0.4 * n) < 3 * sigma

    def test_disabled_passthrough(self):
        q = QfcSpec(ConversionStage(), enabled=False)
        photons = np.linspace(0, 1, 10)
        out, origin = apply_qfc(photons, q, 1.0, 1.0, RandomSource(4))
        assert np.array_equal(out, photons)
        assert np.all(origin == 0)


class TestRouteHom:
    def test_every_photon_exits_once(self):
        photons = np.sort(np.random.default_rng(1).uniform(0, 1e-3, 10_000))
        h = HomInterferometer(delta_tau=12.5e-9, config="parallel")
        a, b = route_hom(photons, h, 100e-12, RandomSource(5))
        assert a.size + b.size == photons.size

    def pair_fraction_different_port(self, config, v, dt, n_pairs=30_000,
                                     tau_c=100e-12, seed=6):
        # inject isolated pairs separated by dt straddling the two arms via
        # emission times dt apart plus the arm delay
        h = HomInterferometer(delta_tau=0.0, v=v, config=config)
        spacing = 1e-6
        base = np.arange(n_pairs) * spacing
        photons = np.sort(np.concatenate([base, base + dt]))
        a, b = route_hom(photons, h, tau_c, RandomSource(seed))
        # count pairs split across ports
        split = 0
        ai = np.searchsorted(a, base - spacing / 4)
        for k, t0 in enumerate(base):
            in_a = np.any((a >= t0 - 1e-9) & (a <= t0 + dt + 1e-9))
            in_b = np.any((b >= t0 - 1e-9) & (b <= t0 + dt + 1e-9))
            both_a = np.sum((a >= t0 - 1e-9) & (a <= t0 + dt + 1e-9)) == 2
            both_b = np.sum((b >= t0 - 1e-9) & (b <= t0 + dt + 1e-9)) == 2
            if in_a and in_b and not (both_a or both_b):
                split += 1
        return split / n_pairs

    def test_orthogonal_pairs_split_half(self):
        # arm assignment is 50/50, so only half the duos meet from opposite
        # arms and coalesce; the rest route independently (also 1/2 split).
        frac = self.pair_fraction_different_port("orthogonal", v=1.0, dt=0.0,
                                                 n_pairs=20_000)
        sigma = np.sqrt(0.25 / 20_000)
        assert abs(frac - 0.5) < 4 * sigma

    def test_parallel_zero_delay_suppressed(self):
        # opposite-arm duos never split; independent same-arm duos split 1/2
        # of the remaining half of cases: expect 1/4
        frac = self.pair_fraction_different_port("parallel", v=1.0, dt=0.0,
                                                 n_pairs=20_000)
        assert frac == pytest.approx(0.25, abs=0.02)

    def test_parallel_coherence_time_scaling(self):
        tau_c = 100e-12
        # at dt = tau_c the coalescence split probability is (1 - e^-2)/2
        frac = self.pair_fraction_different_port("parallel", v=1.0, dt=tau_c,
                                                 n_pairs=20_000, tau_c=tau_c)
        p_pair = 0.5 * (1 - np.exp(-2.0))
        expected = 0.5 * p_pair + 0.5 * 0.5
        assert frac == pytest.approx(expected, abs=0.02)


class TestDetect:
    def test_ideal_detector_identity(self):
        times = np.array([0.0, 1e-9, 2.5e-9])
        s = detect(times, DetectorSpec(), 0, 1.0, RandomSource(1))
        assert np.array_equal(s.ticks, np.rint(times / 4e-12).astype(np.int64))

    def test_dark_counts_poisson(self):
        d = DetectorSpec(efficiency=1.0, dark_rate=50.0)
        s = detect(np.empty(0), d, 0, 100.0, RandomSource(2))
        assert abs(len(s) - 5000) < 3 * np.sqrt(5000)

    def test_jitter_spread(self):
        truth = np.arange(1, 100_001, dtype=float) * 1e-6
        d = DetectorSpec(jitter_fwhm=100e-12)
        s = detect(truth, d, 0, 1.0, RandomSource(3), resolution=1e-12)
        err = s.ticks * 1e-12 - truth[:len(s)]
        sigma_expected = 100e-12 / 2.3548
        assert np.std(err) == pytest.approx(sigma_expected, rel=0.02)

    def test_dead_time_filtering(self):
        times = np.array([0.0, 10e-9, 25e-9, 100e-9])
        d = DetectorSpec(dead_time=50e-9)
        stats = {}
        s = detect(times, d, 0, 1.0, RandomSource(4), stats=stats)
        assert len(s) == 2  # 0 and 100 ns survive
        assert stats["dropped_dead_time"] == 2

    def test_efficiency_thinning(self):
        times = np.linspace(0, 1, 100_000)
        d = DetectorSpec(efficiency=0.3)
        s = detect(times, d, 0, 2.0, RandomSource(5))
        assert abs(len(s) - 30_000) < 3 * np.sqrt(100_000 * 0.3 * 0.7)


class TestRunExperiment:
    def detectors(self):
        return (DetectorSpec(efficiency=0.5), DetectorSpec(efficiency=0.5))

    def test_unknown_scenario_rejected(self):
        with pytest.raises(SimulationError):
            run_experiment("nope", emitter=EmitterSpec(),
                           detectors=self.detectors(), duration=0.001,
                           rng=RandomSource(1))

    def test_hom_requires_interferometer(self):
        with pytest.raises(SimulationError):
            run_experiment("hom_single", emitter=EmitterSpec(),
                           detectors=self.detectors(), duration=0.001,
                           rng=RandomSource(1))

    def test_two_state_requires_charge_model(self):
        with pytest.raises(SimulationError):
            run_experiment("two_state_hbt", emitter=EmitterSpec(),
                           detectors=self.detectors(), duration=0.001,
                           rng=RandomSource(1))

    def test_determinism_bit_identical(self):
        kwargs = dict(emitter=EmitterSpec(), detectors=self.detectors(),
                      duration=0.01, target_g2_zero=0.2)
        s1, _ = run_experiment("hbt_cw", rng=RandomSource(99), **kwargs)
        s2, _ = run_experiment("hbt_cw", rng=RandomSource(99), **kwargs)
        for a, b in zip(s1, s2):
            assert np.array_equal(a.ticks, b.ticks)

    def test_photon_accounting(self):
        streams, stats = run_experiment(
            "hbt_cw", emitter=EmitterSpec(), detectors=self.detectors(),
            duration=0.01, rng=RandomSource(3), target_g2_zero=0.2)
        total_in = stats["det0_input"] + stats["det1_input"]
        assert total_in == stats["emitted"] + stats["background_injected"]
        for ch in (0, 1):
            assert stats[f"det{ch}_detected"] == (
                stats[f"det{ch}_input"]
                - stats[f"det{ch}_dropped_efficiency"]
                + stats[f"det{ch}_dark_counts"]
                - stats[f"det{ch}_dropped_dead_time"])

    def test_qfc_accounting(self):
        q = QfcSpec(ConversionStage(eta_max=0.4, p_max=1.0,
                                    background_rate_coeff=1000.0))
        _, stats = run_experiment(
            "hbt_cw", emitter=EmitterSpec(), detectors=self.detectors(),
            duration=0.01, rng=RandomSource(4), qfc=q, pump_power=1.0)
        assert stats["qfc_converted"] + stats["qfc_dropped"] == stats["qfc_input"]

    def test_cross_correlation_unavailable_after_combining(self):
        cm = ChargeModel(rate_single_capture=2e8, rate_multi_capture=2e7)
        em = EmitterSpec(charge_model=cm)
        q = QfcSpec(ConversionStage())
        with pytest.raises(SimulationError):
            run_experiment("two_state_hbt", emitter=em,
                           detectors=self.detectors(), duration=0.001,
                           rng=RandomSource(5), qfc=q, combine_lines=False)

    def test_simulated_g2_matches_analytic_shape(self):
        # hbt_cw dip must follow 1 - alpha exp(-|t|/tau_r) with
        # tau_r = 1/(pump_rate + 1/lifetime) and alpha from the background mix
        lifetime, pump = 1.5e-9, 2e7
        streams, stats = run_experiment(
            "hbt_cw", emitter=EmitterSpec(lifetime=lifetime, pump_rate=pump),
            detectors=(DetectorSpec(), DetectorSpec()), duration=0.02,
            rng=RandomSource(6), target_g2_zero=0.19)
        s = merge_streams(streams[0], streams[1])
        h = normalize_cw(correlate(
            s, CorrelationRequest(0, 1, "full", 128e-12, 600e-9)), 500e-9)
        tau_r = 1.0 / (pump + 1.0 / lifetime)
        model = 1.0 - 0.81 * np.exp(-np.abs(h.centers) / tau_r)
        sel = np.abs(h.centers) < 50e-9
        chi2 = np.mean(((h.normalized - model)[sel]
                        / h.normalized_sigma[sel]) ** 2)
        assert 0.5 < chi2 < 2.0
