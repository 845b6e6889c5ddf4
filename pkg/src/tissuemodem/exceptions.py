"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A parameter combination violates a precondition."""


class FramingError(ValueError):
    """Bit or symbol stream cannot be framed as requested."""


class TapFileError(ValueError):
    """A channel tap file is malformed.  Message names the offending line."""


class SyncError(RuntimeError):
    """Preamble detection failed (correlation peak below threshold)."""


class CalibrationError(ValueError):
    """Noise calibration impossible (e.g. zero-energy reference signal)."""


class EqualizerDivergence(RuntimeError):
    """Decision-directed adaptation blew up; trial should be discarded."""

    def __init__(self, symbol_index: int, mse_ratio: float):
        self.symbol_index = symbol_index
        self.mse_ratio = mse_ratio
        super().__init__(
            f"equalizer diverged at symbol {symbol_index}: "
            f"windowed MSE grew {mse_ratio:.1f}x over its end-of-training value"
        )
