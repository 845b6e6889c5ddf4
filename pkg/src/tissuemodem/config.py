"""TOML config files, nested-dict presets and their TrialConfig builder.

Config files map 1:1 onto TrialConfig; unknown sections or keys are
rejected so typos fail loudly instead of silently using defaults.
"""

from __future__ import annotations

import dataclasses
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

from .channel import ChannelModel, NoiseSpec, SynthChannelSpec, load_channel, synth_channel
from .equalizer import EqualizerConfig, SparsePolicy
from .exceptions import ConfigurationError
from .framing import FrameSpec
from .harness import TrialConfig

_SCHEMA = {
    "frame": {
        "fb_hz", "fc_hz", "n_symbols", "target_fs_hz", "rolloff",
        "span_symbols", "chirp_duration_s", "guard_duration_s",
        "training_fraction",
    },
    "modulation": {"order"},
    "channel": {
        "path", "resample_taps", "n_echoes", "max_delay_s",
        "decay_db_per_echo", "seed", "doppler_scale",
    },
    "noise": {"eb_n0_db", "seed"},
    "equalizer": {
        "enabled", "n_ff", "n_fb", "fractional_factor", "rls_lambda",
        "rls_delta", "pll_k1", "pll_k2", "sparse_policy",
        "prune_after_symbols", "divergence_factor",
    },
    "run": {
        "n_trials", "seed", "sync_mode", "sync_threshold_db",
        "rx_freq_offset_hz", "rx_phase_offset_rad", "keep_traces",
    },
}

_REQUIRED = {
    "frame": {"fb_hz", "fc_hz", "n_symbols"},
    "modulation": {"order"},
    "noise": {"eb_n0_db"},
}


def validate_config(cfg: dict) -> None:
    """Reject unknown sections/keys and missing required keys."""
    for section, content in cfg.items():
        if section not in _SCHEMA:
            raise ConfigurationError(f"unknown config section [{section}]")
        if not isinstance(content, dict):
            raise ConfigurationError(f"config section [{section}] must be a table")
        unknown = set(content) - _SCHEMA[section]
        if unknown:
            raise ConfigurationError(
                f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}"
            )
    for section, keys in _REQUIRED.items():
        missing = keys - set(cfg.get(section, {}))
        if missing:
            raise ConfigurationError(
                f"missing required key(s) in [{section}]: {', '.join(sorted(missing))}"
            )


def load_config(path) -> dict:
    """Parse and validate a TOML config file."""
    with open(path, "rb") as fh:
        try:
            cfg = _toml.load(fh)
        except _toml.TOMLDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
    validate_config(cfg)
    return cfg


def merge_config(base: dict, override: dict) -> dict:
    """Section-wise overlay of ``override`` onto ``base``."""
    merged = {k: dict(v) for k, v in base.items()}
    for section, content in override.items():
        merged.setdefault(section, {}).update(content)
    return merged


def _build_channel(section: dict, frame: FrameSpec, base_dir: Path | None):
    doppler = float(section.get("doppler_scale", 1.0))
    if "path" in section:
        path = Path(section["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        model = load_channel(path)
    elif "n_echoes" in section:
        spec = SynthChannelSpec(
            n_echoes=int(section["n_echoes"]),
            max_delay_s=float(section["max_delay_s"]),
            decay_db_per_echo=float(section.get("decay_db_per_echo", 6.0)),
            rng_seed=int(section.get("seed", 0)),
        )
        model = synth_channel(spec, frame.fs)
    else:
        # no channel section -> identity channel at the frame rate
        model = ChannelModel(taps=[1.0], tap_sample_rate=frame.fs, label="identity")
    if doppler != 1.0:
        model = dataclasses.replace(model, doppler_scale=doppler)
    return model


def build_trial_config(cfg: dict, base_dir=None) -> TrialConfig:
    """Materialize a TrialConfig from a validated config dict."""
    validate_config(cfg)
    fr = cfg["frame"]
    frame = FrameSpec.design(
        fb=float(fr["fb_hz"]),
        fc=float(fr["fc_hz"]),
        n_symbols=int(fr["n_symbols"]),
        target_fs=float(fr.get("target_fs_hz", 12e6)),
        rolloff=float(fr.get("rolloff", 0.25)),
        span_symbols=int(fr.get("span_symbols", 8)),
        chirp_duration=(
            float(fr["chirp_duration_s"]) if "chirp_duration_s" in fr else None
        ),
        guard_duration=float(fr.get("guard_duration_s", 1e-3)),
        training_fraction=float(fr.get("training_fraction", 0.1)),
    )
    eq_sec = cfg.get("equalizer", {})
    eq = EqualizerConfig(
        n_ff=int(eq_sec.get("n_ff", 18)),
        n_fb=int(eq_sec.get("n_fb", 100)),
        fractional_factor=int(eq_sec.get("fractional_factor", 2)),
        rls_lambda=float(eq_sec.get("rls_lambda", 0.997)),
        rls_delta=float(eq_sec.get("rls_delta", 1e-3)),
        pll_k1=float(eq_sec.get("pll_k1", 1e-2)),
        pll_k2=(float(eq_sec["pll_k2"]) if "pll_k2" in eq_sec else None),
        sparse_policy=SparsePolicy.parse(str(eq_sec.get("sparse_policy", "off"))),
        prune_after_symbols=(
            int(eq_sec["prune_after_symbols"])
            if "prune_after_symbols" in eq_sec
            else None
        ),
        divergence_factor=float(eq_sec.get("divergence_factor", 10.0)),
    )
    noise_sec = cfg["noise"]
    noise = NoiseSpec(
        eb_n0_db=float(noise_sec["eb_n0_db"]),
        rng_seed=(int(noise_sec["seed"]) if "seed" in noise_sec else None),
    )
    run = cfg.get("run", {})
    base_dir = Path(base_dir) if base_dir is not None else None
    return TrialConfig(
        frame=frame,
        order=int(cfg["modulation"]["order"]),
        channel=_build_channel(cfg.get("channel", {}), frame, base_dir),
        noise=noise,
        eq=eq,
        n_trials=int(run.get("n_trials", 100)),
        rng_seed=int(run.get("seed", 0)),
        equalize_enabled=bool(eq_sec.get("enabled", True)),
        sync_mode=str(run.get("sync_mode", "chirp")),
        sync_threshold_db=float(run.get("sync_threshold_db", 6.0)),
        rx_freq_offset_hz=float(run.get("rx_freq_offset_hz", 0.0)),
        rx_phase_offset_rad=float(run.get("rx_phase_offset_rad", 0.0)),
        resample_channel_taps=bool(cfg.get("channel", {}).get("resample_taps", False)),
        keep_traces=bool(run.get("keep_traces", False)),
    )


def load_trial_config(path) -> TrialConfig:
    """Load a TOML file and build its TrialConfig (channel paths relative to it)."""
    cfg = load_config(path)
    return build_trial_config(cfg, base_dir=Path(path).parent)
