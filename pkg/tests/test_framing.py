"""Tests for chirp framing, matched-filter sync, Doppler and resampling."""

import numpy as np
import pytest

from tissuemodem.exceptions import ConfigurationError, SyncError
from tissuemodem.framing import (
    DEFAULT_DOPPLER_GRID,
    FrameSpec,
    build_frame,
    estimate_doppler,
    generate_chirp,
    matched_filter_sync,
    resample,
)
from tissuemodem.modem import (
    BasebandSignal,
    build_constellation,
    design_rrc,
    map_bits,
    shape,
)


def make_spec(fb=500e3, fc=1.2e6, L=8, n_symbols=400, chirp_duration=40e-6,
              guard_duration=100e-6, training_fraction=0.1):
    return FrameSpec(
        fb=fb,
        fc=fc,
        fs=fb * L,
        n_symbols=n_symbols,
        chirp_duration=chirp_duration,
        guard_duration=guard_duration,
        pulse=design_rrc(0.25, 8, L),
        training_fraction=training_fraction,
    )


def make_data(spec, seed=0, order=16):
    rng = np.random.default_rng(seed)
    c = build_constellation(order)
    bits = rng.integers(0, 2, spec.n_symbols * c.bits_per_symbol, dtype=np.uint8)
    return shape(map_bits(bits, c), spec.pulse, sample_rate=spec.fs)


class TestFrameSpec:
    def test_integer_oversampling_enforced(self):
        with pytest.raises(ConfigurationError):
            make_spec(fb=625e3, L=8).__class__(
                fb=625e3, fc=1.2e6, fs=12e6, n_symbols=100,
                chirp_duration=1e-5, guard_duration=0.0,
                pulse=design_rrc(0.25, 8, 8),
            )

    def test_guard_samples_at_12mhz(self):
        spec = make_spec(fb=500e3, L=24, guard_duration=1e-3)
        assert spec.fs == 12e6
        assert spec.guard_samples == 12_000

    def test_training_count_rounds_up(self):
        spec = make_spec(n_symbols=105, training_fraction=0.1)
        assert spec.n_training == 11

    def test_design_picks_even_factor_above_nyquist(self):
        spec = FrameSpec.design(fb=625e3, fc=1.2e6, n_symbols=100, target_fs=12e6)
        assert spec.samples_per_symbol == 20
        assert spec.fs == 12.5e6
        assert spec.fs > 2 * (spec.fc + spec.occupied_bandwidth / 2)


class TestChirp:
    def test_mid_sweep_instantaneous_frequency_near_zero(self):
        spec = make_spec(chirp_duration=80e-6)
        chirp = generate_chirp(spec)
        mid = len(chirp) // 2
        # phase-difference frequency estimate at the sweep midpoint
        inst = np.angle(chirp.samples[mid + 1] * np.conj(chirp.samples[mid])) * spec.fs / (2 * np.pi)
        assert abs(inst) < spec.fb / 100

    def test_sweep_endpoints(self):
        spec = make_spec(chirp_duration=80e-6)
        chirp = generate_chirp(spec)
        f0 = np.angle(chirp.samples[1] * np.conj(chirp.samples[0])) * spec.fs / (2 * np.pi)
        f1 = np.angle(chirp.samples[-1] * np.conj(chirp.samples[-2])) * spec.fs / (2 * np.pi)
        assert abs(f0 - (-spec.fb / 2)) < spec.fb / 50
        assert abs(f1 - spec.fb / 2) < spec.fb / 50

    def test_unit_peak_amplitude(self):
        chirp = generate_chirp(make_spec())
        assert np.allclose(np.abs(chirp.samples), 1.0, atol=1e-12)

    def test_autocorrelation_sidelobes_below_minus_10db(self):
        # time-bandwidth 20 and 40
        for duration in (40e-6, 80e-6):
            spec = make_spec(chirp_duration=duration)
            s = generate_chirp(spec).samples
            corr = np.abs(np.correlate(s, s, mode="full"))
            peak = len(corr) // 2
            excl = spec.samples_per_symbol
            sidelobes = np.concatenate([corr[: peak - excl], corr[peak + excl + 1 :]])
            psl = 20 * np.log10(corr[peak] / sidelobes.max())
            assert psl > 10, f"TB={duration * spec.fb}: PSL {psl:.1f} dB"

    def test_short_preset_time_bandwidth_product(self):
        spec = make_spec(fb=500e3, L=24, chirp_duration=10e-6)
        assert spec.chirp_duration * spec.fb == 5
        assert len(generate_chirp(spec)) == 120

    def test_degenerate_duration_rejected(self):
        spec = make_spec(chirp_duration=1e-6, fb=500e3, L=8)  # 4 samples
        with pytest.raises(ConfigurationError):
            generate_chirp(spec)


class TestBuildFrame:
    def test_layout_and_guard_zeros(self):
        spec = make_spec(fb=500e3, L=24, guard_duration=1e-3, n_symbols=50)
        chirp = generate_chirp(spec)
        data = make_data(spec)
        frame = build_frame(chirp, spec, data)
        c, g = len(chirp), spec.guard_samples
        assert g == 12_000
        assert len(frame) == c + g + len(data)
        assert np.all(frame.samples[c : c + g] == 0)
        assert np.array_equal(frame.samples[:c], chirp.samples)
        assert np.array_equal(frame.samples[c + g :], data.samples)

    def test_zero_length_data(self):
        spec = make_spec()
        chirp = generate_chirp(spec)
        empty = BasebandSignal(np.empty(0, complex), spec.fs)
        frame = build_frame(chirp, spec, empty)
        assert len(frame) == len(chirp) + spec.guard_samples

    def test_energy_additivity(self):
        spec = make_spec()
        chirp = generate_chirp(spec)
        data = make_data(spec)
        frame = build_frame(chirp, spec, data)
        assert np.isclose(frame.energy, chirp.energy + data.energy, rtol=1e-12)

    def test_sample_rate_mismatch_rejected(self):
        spec = make_spec()
        chirp = generate_chirp(spec)
        wrong = BasebandSignal(np.ones(16, complex), spec.fs * 2)
        with pytest.raises(ConfigurationError):
            build_frame(chirp, spec, wrong)


class TestMatchedFilterSync:
    def test_exact_offset_recovery_noiseless(self):
        spec = make_spec()
        chirp = generate_chirp(spec)
        frame = build_frame(chirp, spec, make_data(spec))
        delay = 137
        rx = BasebandSignal(
            np.concatenate([np.zeros(delay, complex), frame.samples]), spec.fs
        )
        sync = matched_filter_sync(rx, chirp, spec)
        true_data_start = delay + len(chirp) + spec.guard_samples
        assert sync.coarse_offset == true_data_start
        assert sync.chirp_start == delay

    def test_noisy_offset_within_one_sample(self):
        """Coarse sync at 0 dB per-bit SNR, 25 random delays."""
        spec = make_spec(chirp_duration=40e-6)  # time-bandwidth 20
        chirp = generate_chirp(spec)
        rng = np.random.default_rng(7)
        c = build_constellation(16)
        hits = 0
        trials = 25
        for _ in range(trials):
            bits = rng.integers(0, 2, spec.n_symbols * 4, dtype=np.uint8)
            data = shape(map_bits(bits, c), spec.pulse, sample_rate=spec.fs)
            frame = build_frame(chirp, spec, data)
            delay = int(rng.integers(0, 2000))
            samples = np.concatenate([np.zeros(delay, complex), frame.samples])
            # complex AWGN at Eb/N0 = 0 dB: N0 = Eb, complex var N0 * fs
            eb = frame.energy / (spec.n_symbols * 4)
            sigma = np.sqrt(eb * spec.fs / 2)
            noise = sigma * (rng.standard_normal(len(samples)) + 1j * rng.standard_normal(len(samples)))
            rx = BasebandSignal(samples + noise, spec.fs)
            try:
                sync = matched_filter_sync(rx, chirp, spec)
            except SyncError:
                continue
            if abs(sync.chirp_start - delay) <= 1:
                hits += 1
        assert hits >= trials - 1

    def test_pure_noise_raises_detection_failure(self):
        spec = make_spec()
        chirp = generate_chirp(spec)
        rng = np.random.default_rng(3)
        rx = BasebandSignal(
            rng.standard_normal(20_000) + 1j * rng.standard_normal(20_000), spec.fs
        )
        with pytest.raises(SyncError):
            matched_filter_sync(rx, chirp, spec)

    def test_short_input_rejected(self):
        spec = make_spec()
        chirp = generate_chirp(spec)
        rx = BasebandSignal(np.zeros(len(chirp) - 1, complex), spec.fs)
        with pytest.raises(ConfigurationError):
            matched_filter_sync(rx, chirp, spec)


class TestEstimateDoppler:
    def _frame(self, spec, seed=0):
        chirp = generate_chirp(spec)
        return chirp, build_frame(chirp, spec, make_data(spec, seed=seed))

    def test_unscaled_returns_exactly_one(self):
        spec = make_spec(chirp_duration=80e-6)
        chirp, frame = self._frame(spec)
        est = estimate_doppler(frame, chirp, exclusion=spec.samples_per_symbol)
        assert est.scale == 1.0
        assert not est.at_boundary

    def test_scaled_frame_within_one_grid_step(self):
        spec = make_spec(chirp_duration=80e-6)
        chirp, frame = self._frame(spec)
        scaled = resample(frame, 1.002)
        est = estimate_doppler(scaled, chirp, exclusion=spec.samples_per_symbol)
        assert abs(est.scale - 1.002) <= 5e-4 + 1e-12

    def test_scaled_noisy_frame_within_one_grid_step(self):
        """Holds down to ~10 dB per-bit SNR for an adequate chirp."""
        spec = make_spec(chirp_duration=200e-6)  # time-bandwidth 100
        chirp, frame = self._frame(spec)
        scaled = resample(frame, 1.0015)
        rng = np.random.default_rng(21)
        eb = scaled.energy / (spec.n_symbols * 4)
        sigma = np.sqrt(eb / 10 * spec.fs / 2)
        noisy = BasebandSignal(
            scaled.samples
            + sigma * (rng.standard_normal(len(scaled)) + 1j * rng.standard_normal(len(scaled))),
            spec.fs,
        )
        est = estimate_doppler(noisy, chirp, exclusion=spec.samples_per_symbol)
        assert abs(est.scale - 1.0015) <= 5e-4 + 1e-12

    def test_out_of_grid_scale_flags_boundary(self):
        spec = make_spec(chirp_duration=80e-6)
        chirp, frame = self._frame(spec)
        scaled = resample(frame, 1.02)
        est = estimate_doppler(scaled, chirp, exclusion=spec.samples_per_symbol)
        assert est.at_boundary
        assert est.scale == DEFAULT_DOPPLER_GRID.max()

    def test_empty_grid_rejected(self):
        spec = make_spec()
        chirp, frame = self._frame(spec)
        with pytest.raises(ConfigurationError):
            estimate_doppler(frame, chirp, scale_grid=[])

    def test_pure_noise_raises_detection_failure(self):
        spec = make_spec(chirp_duration=80e-6)
        chirp = generate_chirp(spec)
        rng = np.random.default_rng(9)
        noise = BasebandSignal(
            rng.standard_normal(30_000) + 1j * rng.standard_normal(30_000), spec.fs
        )
        with pytest.raises(SyncError):
            estimate_doppler(noise, chirp, exclusion=spec.samples_per_symbol)


class TestResample:
    def test_identity_scale_is_exact(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(5000) + 1j * rng.standard_normal(5000)
        y = resample(x, 1.0)
        assert len(y) == len(x)
        assert np.max(np.abs(y - x)) < 1e-9

    def test_round_trip_interior_snr(self):
        """resample(resample(x, a), 1/a) ~ x for bandlimited x."""
        from scipy.signal import firwin, fftconvolve

        rng = np.random.default_rng(1)
        noise = rng.standard_normal(40_000)
        x = fftconvolve(noise, firwin(255, 0.2), mode="same")
        y = resample(resample(x, 1.001), 1 / 1.001)
        n = min(len(x), len(y))
        mid = slice(n // 4, 3 * n // 4)
        err = y[mid] - x[: n][mid]
        snr = 10 * np.log10(np.mean(x[mid] ** 2) / np.mean(err**2))
        assert snr > 60

    def test_tone_frequency_scales(self):
        fs, f0, a = 1.0, 0.05, 1.003
        n = np.arange(60_000)
        x = np.exp(2j * np.pi * f0 * n)
        y = resample(x, a)
        mid = y[1000:-1000]
        inst = np.angle(mid[1:] * np.conj(mid[:-1])).mean() / (2 * np.pi)
        assert abs(inst - f0 * a) < 1e-4 * f0

    def test_scale_outside_limits_rejected(self):
        with pytest.raises(ConfigurationError):
            resample(np.ones(100), 1.2)

    def test_signal_wrappers_preserve_type_and_rate(self):
        bb = BasebandSignal(np.ones(100, complex), 48000.0)
        out = resample(bb, 1.001)
        assert isinstance(out, BasebandSignal)
        assert out.sample_rate == 48000.0
        assert len(out) == int(100 / 1.001)


class TestGuardIsolation:
    def test_no_chirp_leakage_into_data_through_short_channel(self):
        """FIR shorter than the guard -> data segment equals data convolved alone."""
        spec = make_spec(guard_duration=100e-6)  # 400 samples at 4 MHz
        chirp = generate_chirp(spec)
        data = make_data(spec)
        frame = build_frame(chirp, spec, data)
        rng = np.random.default_rng(2)
        h = rng.standard_normal(200)  # shorter than the guard
        rx = np.convolve(frame.samples, h)
        start = len(chirp) + spec.guard_samples
        expected = np.convolve(data.samples, h)
        got = rx[start : start + len(expected)]
        scale = np.max(np.abs(expected))
        assert np.max(np.abs(got - expected)) < 1e-10 * scale
