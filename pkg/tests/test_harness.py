"""Tests for trial orchestration, sweeps, success rule, CSV and config."""

import dataclasses
import math

import numpy as np
import pytest

from tissuemodem.channel import ChannelModel, NoiseSpec
from tissuemodem.config import (
    load_config,
    load_trial_config,
    merge_config,
    validate_config,
)
from tissuemodem.equalizer import EqualizerConfig, theoretical_ber
from tissuemodem.exceptions import ConfigurationError
from tissuemodem.framing import FrameSpec
from tissuemodem.harness import (
    TrialReport,
    TrialConfig,
    emit_csv,
    run_batch,
    run_trial,
    success_criterion,
    sweep,
    sync_trial,
    write_ber_series_csv,
)
from tissuemodem.modem import data_rate, design_rrc
from tissuemodem.presets import PRESETS, load_preset, preset_config


def small_cfg(
    order=16,
    eb_n0_db=math.inf,
    n_symbols=1200,
    L=8,
    n_trials=1,
    channel=None,
    chirp_duration=40e-6,
    **kw,
):
    frame = FrameSpec(
        fb=500e3,
        fc=1.2e6,
        fs=500e3 * L,
        n_symbols=n_symbols,
        chirp_duration=chirp_duration,
        guard_duration=100e-6,
        pulse=design_rrc(0.25, 8, L),
        training_fraction=0.15,
    )
    if channel is None:
        channel = ChannelModel(taps=[1.0], tap_sample_rate=frame.fs, label="identity")
    return TrialConfig(
        frame=frame,
        order=order,
        channel=channel,
        noise=NoiseSpec(eb_n0_db=eb_n0_db),
        eq=EqualizerConfig(n_ff=18, n_fb=12),
        n_trials=n_trials,
        rng_seed=123,
        **kw,
    )


class TestRunTrial:
    @pytest.mark.parametrize("order", (4, 16, 64, 256))
    def test_no_noise_identity_is_error_free(self, order):
        res = run_trial(small_cfg(order=order), 0)
        assert res.converged
        assert res.bit_errors == 0
        assert res.bits_tested == (1200 - 180) * int(math.log2(order))
        assert res.sync_offset_error == 0

    def test_deterministic_for_seed(self):
        cfg = small_cfg(eb_n0_db=15.0)
        a = run_trial(cfg, 3)
        b = run_trial(cfg, 3)
        assert a == b

    def test_trials_differ(self):
        cfg = small_cfg(eb_n0_db=8.0, order=64)
        a, b = run_trial(cfg, 0), run_trial(cfg, 1)
        assert a.bit_errors != b.bit_errors or a.output_snr_db != b.output_snr_db

    def test_training_bits_never_counted(self):
        cfg = small_cfg(order=4)
        res = run_trial(cfg, 0)
        assert res.bits_tested == (cfg.frame.n_symbols - cfg.frame.n_training) * 2

    def test_unequalized_path(self):
        cfg = small_cfg(equalize_enabled=False)
        res = run_trial(cfg, 0)
        assert res.converged and res.bit_errors == 0

    def test_known_sync_mode(self):
        cfg = small_cfg(sync_mode="known")
        res = run_trial(cfg, 0)
        assert res.converged and res.bit_errors == 0

    def test_doppler_channel_roundtrip(self):
        # scale discrimination needs an adequate chirp time-bandwidth (200 here)
        chan = ChannelModel(
            taps=[1.0], tap_sample_rate=4e6, label="identity", doppler_scale=1.002
        )
        cfg = small_cfg(channel=chan, eb_n0_db=25.0, chirp_duration=100 / 500e3)
        res = run_trial(cfg, 0)
        assert res.converged
        assert res.doppler_scale_est == pytest.approx(1.002, abs=5.01e-4)
        assert res.bit_errors == 0

    def test_sync_failure_marks_nonconverged(self):
        cfg = small_cfg(eb_n0_db=-20.0)
        res = run_trial(cfg, 0)
        assert not res.converged
        assert "SyncError" in res.failure
        assert res.bits_tested == 0

    def test_rx_phase_and_freq_offsets(self):
        cfg = small_cfg(
            eb_n0_db=20.0,
            rx_phase_offset_rad=np.pi / 8,
            rx_freq_offset_hz=1e-4 * 500e3,
        )
        res = run_trial(cfg, 0)
        assert res.converged and res.bit_errors == 0


class TestSyncTrial:
    def test_reports_offset_error_and_delay(self):
        res = sync_trial(small_cfg(eb_n0_db=10.0), 0, max_delay_samples=500)
        assert res.detected
        assert abs(res.offset_error) <= 1
        assert 0 <= res.true_delay <= 500


class TestRunBatch:
    def test_aggregates_and_counts(self):
        cfg = small_cfg(eb_n0_db=12.0, order=16, n_trials=4)
        report = run_batch(cfg)
        assert report.n_trials == 4
        assert report.n_converged == 4
        assert report.bits_tested == sum(t.bits_tested for t in report.trials)
        assert report.ber == report.bit_errors / report.bits_tested
        assert report.data_rate_bps == data_rate(cfg.frame.fb, cfg.order)
        assert report.converged

    def test_keep_traces(self):
        cfg = small_cfg(n_trials=1, keep_traces=True)
        report = run_batch(cfg)
        trial = report.trials[0]
        assert trial.mse_trace is not None
        assert trial.equalizer_output is not None
        assert len(trial.mse_trace) == cfg.frame.n_symbols


class TestSuccessCriterion:
    def test_success_below_limits(self):
        res = success_criterion([(22.0, 5e-5)])
        assert res.success and res.min_snr_db == 22.0

    def test_ber_above_threshold_fails(self):
        assert not success_criterion([(29.0, 2e-4)]).success

    def test_snr_at_limit_fails(self):
        assert not success_criterion([(31.0, 1e-6)]).success
        assert not success_criterion([(30.0, 1e-6)]).success

    def test_picks_smallest_qualifying_snr(self):
        res = success_criterion([(18.0, 5e-5), (22.0, 1e-6), (26.0, 0.0)])
        assert res.min_snr_db == 18.0

    def test_empty_series_rejected(self):
        with pytest.raises(ConfigurationError):
            success_criterion([])

    def test_unconverged_points_do_not_count(self):
        good = TrialReport(
            order=16, fb=5e5, eb_n0_db=20.0, n_trials=100, n_converged=100,
            bit_errors=0, bits_tested=10**6, output_snr_db=25.0,
            data_rate_bps=2e6, trials=(),
        )
        shaky = dataclasses.replace(good, eb_n0_db=15.0, n_converged=90)
        res = success_criterion([shaky, good])
        assert res.success and res.min_snr_db == 20.0


class TestSweep:
    def test_single_point_equals_run_batch(self):
        cfg = small_cfg(eb_n0_db=18.0, n_trials=2)
        direct = run_batch(cfg)
        result = sweep(cfg)
        assert len(result.series) == 1
        assert result.series[0].reports[0] == direct

    def test_grid_structure_16_combinations(self):
        cfg = small_cfg(eb_n0_db=math.inf, n_trials=1, n_symbols=600)
        result = sweep(
            cfg,
            orders=[4, 16, 64, 256],
            symbol_rates=[250e3, 400e3, 500e3, 625e3],
            eb_n0_dbs=[math.inf],
        )
        assert len(result.series) == 16
        for s in result.series:
            assert len(s.reports) == 1
            assert s.reports[0].data_rate_bps == data_rate(s.fb, s.order)
            assert s.reports[0].bit_errors == 0

    def test_awgn_sweep_matches_theory_within_factor_two(self):
        """Identity channel, equalizer off: BER tracks the closed form."""
        cfg = small_cfg(
            order=4, n_symbols=31_250, n_trials=1, equalize_enabled=False,
            sync_mode="known",
        )
        eb = 6.0
        result = sweep(cfg, eb_n0_dbs=[eb])
        report = result.series[0].reports[0]
        assert report.bits_tested >= 50_000
        theory = theoretical_ber(4, eb)
        assert theory / 2 < report.ber < theory * 2

    def test_empty_axis_rejected(self):
        with pytest.raises(ConfigurationError):
            sweep(small_cfg(), orders=[])


class TestCsv:
    def _report(self, eb=20.0):
        return TrialReport(
            order=16, fb=5e5, eb_n0_db=eb, n_trials=7, n_converged=7,
            bit_errors=3, bits_tested=45_000, output_snr_db=21.5,
            data_rate_bps=2e6, trials=(),
        )

    def test_ber_series_columns(self, tmp_path):
        path = tmp_path / "series.csv"
        write_ber_series_csv([self._report(18.0), self._report(22.0)], path)
        lines = path.read_text().splitlines()
        assert lines[0] == "eb_n0_db,ber,trials,converged"
        assert lines[1].startswith("18,")
        assert len(lines) == 3

    def test_mse_and_constellation_csv(self, tmp_path):
        cfg = small_cfg(n_trials=1, keep_traces=True)
        report = run_batch(cfg)
        out = report.trials[0].equalizer_output
        emit_csv(out.mse_trace, tmp_path / "mse.csv")
        emit_csv(out, tmp_path / "const.csv")
        mse_lines = (tmp_path / "mse.csv").read_text().splitlines()
        assert mse_lines[0] == "symbol_index,mse"
        assert len(mse_lines) == cfg.frame.n_symbols + 1
        const_lines = (tmp_path / "const.csv").read_text().splitlines()
        assert const_lines[0] == "re,im,decided_re,decided_im"

    def test_summary_deterministic_bytes(self, tmp_path):
        cfg = small_cfg(eb_n0_db=15.0, n_trials=2, n_symbols=600)
        a = sweep(cfg, eb_n0_dbs=[12.0, 15.0])
        b = sweep(cfg, eb_n0_dbs=[12.0, 15.0])
        emit_csv(a, tmp_path / "a.csv")
        emit_csv(b, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


CONFIG_TOML = """
[frame]
fb_hz = 500e3
fc_hz = 1.2e6
n_symbols = 1000
target_fs_hz = 4e6
training_fraction = 0.15

[modulation]
order = 16

[channel]
n_echoes = 2
max_delay_s = 20e-6
decay_db_per_echo = 9.0
seed = 5

[noise]
eb_n0_db = 22.0

[equalizer]
n_ff = 18
n_fb = 24

[run]
n_trials = 3
seed = 99
"""


class TestConfigFiles:
    def test_load_and_build(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text(CONFIG_TOML, encoding="utf-8")
        cfg = load_trial_config(path)
        assert cfg.order == 16
        assert cfg.frame.fb == 500e3
        assert cfg.frame.samples_per_symbol == 8
        assert cfg.eq.n_fb == 24
        assert cfg.n_trials == 3
        assert cfg.rng_seed == 99
        assert cfg.channel.label == "synth-2-echo"
        res = run_trial(cfg, 0)
        assert res.converged

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text(CONFIG_TOML + "\n[frame2]\nx = 1\n", encoding="utf-8")
        with pytest.raises(ConfigurationError, match="frame2"):
            load_config(path)

    def test_unknown_key_in_section_rejected(self):
        with pytest.raises(ConfigurationError, match="fb_mhz"):
            validate_config({"frame": {"fb_mhz": 1}})

    def test_missing_required_rejected(self):
        with pytest.raises(ConfigurationError, match="eb_n0_db"):
            validate_config({
                "frame": {"fb_hz": 1e6, "fc_hz": 2e6, "n_symbols": 100},
                "modulation": {"order": 4},
            })

    def test_channel_tap_file_path_resolution(self, tmp_path):
        taps = tmp_path / "ch.taps"
        taps.write_text("# tissuemodem-fir v1\nrate_hz=4e6\nlabel=disk\n1.0\n")
        cfg_file = tmp_path / "cfg.toml"
        cfg_file.write_text(
            CONFIG_TOML.replace(
                "n_echoes = 2\nmax_delay_s = 20e-6\ndecay_db_per_echo = 9.0\nseed = 5",
                'path = "ch.taps"',
            ),
            encoding="utf-8",
        )
        cfg = load_trial_config(cfg_file)
        assert cfg.channel.label == "disk"

    def test_merge_overlays_sections(self):
        base = preset_config("fir-sim")
        merged = merge_config(base, {"noise": {"eb_n0_db": 17.5}, "run": {"seed": 7}})
        assert merged["noise"]["eb_n0_db"] == 17.5
        assert merged["run"]["seed"] == 7
        assert merged["frame"]["fb_hz"] == 500e3


class TestPresets:
    def test_registry_names(self):
        assert set(PRESETS) == {"fir-sim", "sm1-water", "pork-2cm", "rabbit"}

    def test_fir_sim_parameters(self):
        cfg = load_preset("fir-sim")
        assert cfg.order == 16
        assert cfg.frame.fb == 500e3
        assert cfg.frame.fc == 1.2e6
        assert cfg.frame.fs == 12e6
        assert cfg.frame.n_symbols == 12_500  # 50,000 bits at 16-QAM
        assert cfg.frame.chirp_duration == 10e-6
        assert cfg.frame.guard_duration == 1e-3
        assert cfg.frame.training_fraction == 0.10
        assert cfg.eq.n_ff == 18 and cfg.eq.n_fb == 100
        assert cfg.eq.rls_lambda == 0.997
        assert cfg.eq.fractional_factor == 2
        assert cfg.n_trials == 100

    def test_experiment_presets(self):
        sm1 = load_preset("sm1-water")
        assert (sm1.order, sm1.frame.fb, sm1.frame.fc) == (64, 1.1e6, 1.25e6)
        assert (sm1.eq.n_ff, sm1.eq.n_fb) == (53, 90)
        assert data_rate(sm1.frame.fb, sm1.order) == 6.6e6
        pork = load_preset("pork-2cm")
        assert (pork.order, pork.frame.fb, pork.frame.fc) == (16, 500e3, 1.4e6)
        rabbit = load_preset("rabbit")
        assert (rabbit.order, rabbit.frame.fb, rabbit.frame.fc) == (256, 400e3, 1.1e6)

    def test_unknown_preset(self):
        with pytest.raises(ConfigurationError):
            preset_config("nope")

    def test_overrides(self):
        cfg = load_preset("fir-sim", {"run": {"n_trials": 2, "seed": 1}})
        assert cfg.n_trials == 2 and cfg.rng_seed == 1


class TestConfigValidationRules:
    def test_identifiability_enforced(self):
        # 18 + 200 taps never fits the 180 training symbols of the small frame
        with pytest.raises(ConfigurationError, match="training"):
            dataclasses.replace(small_cfg(), eq=EqualizerConfig(n_ff=18, n_fb=200))

    def test_fractional_factor_must_divide_oversampling(self):
        with pytest.raises(ConfigurationError, match="divisible"):
            dataclasses.replace(
                small_cfg(), eq=EqualizerConfig(n_ff=8, n_fb=8, fractional_factor=3)
            )

    def test_known_sync_with_doppler_rejected(self):
        chan = ChannelModel(taps=[1.0], tap_sample_rate=4e6, doppler_scale=1.001)
        with pytest.raises(ConfigurationError, match="Doppler"):
            small_cfg(channel=chan, sync_mode="known")
