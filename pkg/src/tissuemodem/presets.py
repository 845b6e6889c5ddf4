"""Shipped configurations.

Each preset is a config dict in the same shape as a TOML config file, so
``--preset`` and ``--config`` compose (the file overlays the preset).
Presets carry the transmission parameters of the experiments they mirror;
pair them with a measured tap file or keep the bundled synthetic channel.

========== ===================================================================
fir-sim    FIR-channel simulation defaults: 16-QAM at 500 kHz around a
           1.2 MHz carrier, 50,000 bits per packet, 10 us chirp, 1 ms guard,
           18 half-spaced feedforward / 100 feedback taps, RLS forgetting
           0.997, 10% training, 100 trials per point.
sm1-water  2-mm transducer water link: 64-QAM at 1.1 MHz around 1.25 MHz,
           20,000-symbol packets, up to 53/90 taps.
pork-2cm   2 cm pork-chop link: 16-QAM at 500 kHz around 1.4 MHz.
rabbit     rabbit-abdomen link: 256-QAM at 400 kHz around 1.1 MHz.
========== ===================================================================
"""

from __future__ import annotations

from .config import build_trial_config, merge_config
from .exceptions import ConfigurationError

PRESETS: dict[str, dict] = {
    "fir-sim": {
        "frame": {
            "fb_hz": 500e3,
            "fc_hz": 1.2e6,
            "n_symbols": 12500,
            "target_fs_hz": 12e6,
            "rolloff": 0.25,
            "chirp_duration_s": 10e-6,
            "guard_duration_s": 1e-3,
            "training_fraction": 0.10,
        },
        "modulation": {"order": 16},
        "channel": {
            "n_echoes": 5,
            "max_delay_s": 200e-6,  # spans 100 symbols at 500 kHz
            "decay_db_per_echo": 8.0,
            "seed": 1,
        },
        "noise": {"eb_n0_db": 30.0},
        "equalizer": {"n_ff": 18, "n_fb": 100, "rls_lambda": 0.997},
        "run": {"n_trials": 100, "seed": 0},
    },
    "sm1-water": {
        "frame": {
            "fb_hz": 1.1e6,
            "fc_hz": 1.25e6,
            "n_symbols": 20000,
            "target_fs_hz": 11e6,
            "rolloff": 0.25,
            "chirp_duration_s": 10e-6,
            "guard_duration_s": 1e-3,
            "training_fraction": 0.10,
        },
        "modulation": {"order": 64},
        "channel": {"n_echoes": 3, "max_delay_s": 50e-6, "decay_db_per_echo": 10.0, "seed": 2},
        "noise": {"eb_n0_db": 25.0},
        "equalizer": {"n_ff": 53, "n_fb": 90, "rls_lambda": 0.997},
        "run": {"n_trials": 100, "seed": 0},
    },
    "pork-2cm": {
        "frame": {
            "fb_hz": 500e3,
            "fc_hz": 1.4e6,
            "n_symbols": 20000,
            "target_fs_hz": 12e6,
            "rolloff": 0.25,
            "chirp_duration_s": 10e-6,
            "guard_duration_s": 1e-3,
            "training_fraction": 0.10,
        },
        "modulation": {"order": 16},
        "channel": {"n_echoes": 4, "max_delay_s": 100e-6, "decay_db_per_echo": 9.0, "seed": 3},
        "noise": {"eb_n0_db": 28.0},
        "equalizer": {"n_ff": 53, "n_fb": 90, "rls_lambda": 0.997},
        "run": {"n_trials": 100, "seed": 0},
    },
    "rabbit": {
        "frame": {
            "fb_hz": 400e3,
            "fc_hz": 1.1e6,
            "n_symbols": 20000,
            "target_fs_hz": 12e6,
            "rolloff": 0.25,
            "chirp_duration_s": 10e-6,
            "guard_duration_s": 1e-3,
            "training_fraction": 0.10,
        },
        "modulation": {"order": 256},
        "channel": {"n_echoes": 3, "max_delay_s": 50e-6, "decay_db_per_echo": 12.0, "seed": 4},
        "noise": {"eb_n0_db": 32.0},
        "equalizer": {"n_ff": 53, "n_fb": 90, "rls_lambda": 0.997},
        "run": {"n_trials": 100, "seed": 0},
    },
}


def preset_config(name: str) -> dict:
    """Deep copy of a preset's config dict."""
    try:
        preset = PRESETS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}"
        ) from None
    return {section: dict(content) for section, content in preset.items()}


def load_preset(name: str, overrides: dict | None = None):
    """Build the TrialConfig for a preset, optionally overlaying a config dict."""
    cfg = preset_config(name)
    if overrides:
        cfg = merge_config(cfg, overrides)
    return build_trial_config(cfg)
