"""Software-defined ultrasonic QAM modem and channel simulator.

Transmit chain (Gray QAM, root-raised-cosine shaping, chirp-preamble
framing, carrier upconversion), FIR multipath / Doppler / AWGN propagation,
a phase-tracking fractionally-spaced sparse decision-feedback receiver, and
a Monte-Carlo BER harness with CLI.
"""

from .channel import (
    ChannelModel,
    NoiseSpec,
    SynthChannelSpec,
    add_awgn,
    apply_channel,
    apply_doppler,
    load_channel,
    save_channel,
    synth_channel,
)
from .equalizer import (
    DfeState,
    EqualizerConfig,
    EqualizerOutput,
    SparsePolicy,
    equalize,
    prune_taps,
    theoretical_ber,
)
from .exceptions import (
    CalibrationError,
    ConfigurationError,
    EqualizerDivergence,
    FramingError,
    SyncError,
    TapFileError,
)
from .framing import (
    DopplerEstimate,
    FrameSpec,
    SyncResult,
    build_frame,
    estimate_doppler,
    generate_chirp,
    matched_filter_sync,
    resample,
)
from .harness import (
    SweepResult,
    TrialConfig,
    TrialReport,
    emit_csv,
    run_batch,
    run_trial,
    success_criterion,
    sweep,
)
from .modem import (
    BasebandSignal,
    Constellation,
    PassbandSignal,
    PulseShape,
    build_constellation,
    data_rate,
    demap,
    design_rrc,
    downconvert,
    map_bits,
    shape,
    upconvert,
)
from .presets import PRESETS, load_preset
from .transport import TransportReport, recv_file, send_file

__version__ = "0.1.0"
