"""Bandpass filtering and band-power feature extraction.

Two filtering paths share one coefficient design:

* causal streaming (online decoding and offline training, identical numerics),
* zero-phase forward-backward (physiological topography analysis only).

"Second-order Butterworth" means a second-order analog low-pass prototype
transformed to bandpass, i.e. a fourth-order digital filter, designed by the
bilinear transform with frequency pre-warping (scipy's convention). Filters
are realized as cascaded biquad sections, which stay numerically stable even
for narrow bands where the expanded polynomial form degenerates.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.signal import butter, sosfilt

from .errors import (
    ChannelMismatch,
    DegenerateBaseline,
    InsufficientSamples,
    InvalidBand,
    SignalTooShort,
)

BASELINE_EPSILON = 1e-12  # signal-units^2; below this a baseline entry is a dropout

ALPHA_BAND_HZ = (7.0, 12.0)
BETA_BAND_HZ = (12.0, 30.0)
BROADBAND_HZ = (7.0, 30.0)
WINDOW_S = 2.0
STEP_S = 1.0


class PhaseMode(str, Enum):
    CAUSAL = "causal"
    ZERO_PHASE = "zero_phase"


@dataclass(frozen=True)
class FilterSpec:
    low_cut_hz: float
    high_cut_hz: float
    prototype_order: int = 2
    sample_rate_hz: float = 512.0
    phase_mode: PhaseMode = PhaseMode.CAUSAL

    def __post_init__(self) -> None:
        nyquist = self.sample_rate_hz / 2.0
        if not (0.0 < self.low_cut_hz < self.high_cut_hz < nyquist):
            raise InvalidBand(
                f"need 0 < low ({self.low_cut_hz}) < high ({self.high_cut_hz})"
                f" < Nyquist ({nyquist})"
            )
        if self.prototype_order < 1:
            raise InvalidBand(f"prototype_order must be >= 1, got {self.prototype_order}")


@dataclass(frozen=True)
class FilterCoefficients:
    """Biquad cascade; each row is (b0, b1, b2, 1, a1, a2).

    ``feedforward``/``feedback`` expose per-section coefficient lists with the
    leading feedback coefficient normalized to 1. The digital order is
    2 * n_sections = 2 * prototype_order for a bandpass design.
    """

    sections: np.ndarray  # (n_sections, 6)

    @property
    def order(self) -> int:
        return 2 * self.sections.shape[0]

    @property
    def feedforward(self) -> np.ndarray:
        return self.sections[:, :3]

    @property
    def feedback(self) -> np.ndarray:
        return self.sections[:, 3:]


@dataclass
class StreamFilterState:
    """Per-channel delay lines for the streaming recurrence.

    A freshly created state is all-zero, so streaming from it is identical to
    filtering the concatenated signal from time zero.
    """

    zi: np.ndarray  # (n_sections, n_channels, 2)

    @property
    def n_channels(self) -> int:
        return self.zi.shape[1]

    def copy(self) -> "StreamFilterState":
        return StreamFilterState(self.zi.copy())


@dataclass(frozen=True)
class BandPowerFrame:
    window_end_time_s: float
    alpha_power: np.ndarray  # (n_channels,), signal-units^2
    beta_power: np.ndarray  # (n_channels,)


@dataclass(frozen=True)
class BandBaseline:
    """Per-channel per-band normalization denominators."""

    alpha: np.ndarray
    beta: np.ndarray


def design_bandpass(spec: FilterSpec) -> FilterCoefficients:
    """Digital Butterworth bandpass for the given spec.

    The magnitude response is monotone in each stopband with -3 dB points at
    the cut frequencies.
    """
    sos = butter(
        spec.prototype_order,
        [spec.low_cut_hz, spec.high_cut_hz],
        btype="bandpass",
        fs=spec.sample_rate_hz,
        output="sos",
    )
    return FilterCoefficients(sections=np.asarray(sos))


def new_filter_state(coeffs: FilterCoefficients, n_channels: int) -> StreamFilterState:
    return StreamFilterState(np.zeros((coeffs.sections.shape[0], n_channels, 2)))


def filter_block(
    coeffs: FilterCoefficients, state: StreamFilterState, block: np.ndarray
) -> tuple[np.ndarray, StreamFilterState]:
    """Run the recursive difference equations over one (channels, time) block.

    Output is bit-identical for any partitioning of the input into blocks.
    """
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 2:
        raise ChannelMismatch(f"expected (channels, time) block, got shape {block.shape}")
    if block.shape[0] != state.n_channels:
        raise ChannelMismatch(
            f"block has {block.shape[0]} channels, state has {state.n_channels}"
        )
    if block.shape[1] == 0:
        return block.copy(), state.copy()
    filtered, zi = sosfilt(coeffs.sections, block, axis=1, zi=state.zi)
    return filtered, StreamFilterState(zi)


def filter_causal(coeffs: FilterCoefficients, signal: np.ndarray) -> np.ndarray:
    """One-shot causal filtering from zero initial state."""
    signal = np.atleast_2d(np.asarray(signal, dtype=np.float64))
    out, _ = filter_block(coeffs, new_filter_state(coeffs, signal.shape[0]), signal)
    return out


def filter_zero_phase(coeffs: FilterCoefficients, signal: np.ndarray) -> np.ndarray:
    """Forward-backward filtering: zero group delay, squared magnitude response.

    Edges are reflect-padded by 3x the filter order to suppress transients.
    """
    signal = np.atleast_2d(np.asarray(signal, dtype=np.float64))
    pad = 3 * coeffs.order
    if signal.shape[1] <= pad:
        raise SignalTooShort(
            f"need more than {pad} samples for zero-phase padding, got {signal.shape[1]}"
        )
    padded = np.pad(signal, ((0, 0), (pad, pad)), mode="reflect")
    forward = filter_causal(coeffs, padded)
    backward = filter_causal(coeffs, forward[:, ::-1])
    out = backward[:, ::-1]
    return np.ascontiguousarray(out[:, pad:-pad])


def window_mean_power(squared: np.ndarray, start: int, length: int) -> np.ndarray:
    """Mean of pre-squared samples over [start, start+length) per channel.

    Single shared reduction so online, epoching, and replay paths agree
    bit-for-bit.
    """
    return squared[:, start : start + length].mean(axis=1)


def band_power_frames(
    filtered_alpha: np.ndarray,
    filtered_beta: np.ndarray,
    window_s: float = WINDOW_S,
    step_s: float = STEP_S,
    sample_rate_hz: float = 512.0,
) -> list[BandPowerFrame]:
    """Sliding mean-square power frames over both band-filtered signals.

    The frame with window_end_time t covers the window (t - window_s, t]; with
    duration T there are floor((T - window_s)/step_s) + 1 frames.
    """
    alpha = np.atleast_2d(np.asarray(filtered_alpha, dtype=np.float64))
    beta = np.atleast_2d(np.asarray(filtered_beta, dtype=np.float64))
    if alpha.shape != beta.shape:
        raise ChannelMismatch(
            f"alpha shape {alpha.shape} differs from beta shape {beta.shape}"
        )
    win_n = int(round(window_s * sample_rate_hz))
    step_n = int(round(step_s * sample_rate_hz))
    n = alpha.shape[1]
    if n < win_n:
        raise InsufficientSamples(f"need {win_n} samples for one window, got {n}")
    sq_alpha = alpha * alpha
    sq_beta = beta * beta
    frames = []
    n_frames = (n - win_n) // step_n + 1
    for j in range(n_frames):
        start = j * step_n
        frames.append(
            BandPowerFrame(
                window_end_time_s=(start + win_n) / sample_rate_hz,
                alpha_power=window_mean_power(sq_alpha, start, win_n),
                beta_power=window_mean_power(sq_beta, start, win_n),
            )
        )
    return frames


def normalize_frame(frame: BandPowerFrame, baseline: BandBaseline) -> BandPowerFrame:
    """Divide each power entry by its baseline entry.

    Raises DegenerateBaseline when any denominator is below BASELINE_EPSILON
    (treated as a sensor dropout).
    """
    for arr in (baseline.alpha, baseline.beta):
        if np.any(np.asarray(arr) < BASELINE_EPSILON):
            raise DegenerateBaseline(
                f"baseline entry below {BASELINE_EPSILON}; dropout channel?"
            )
    return BandPowerFrame(
        window_end_time_s=frame.window_end_time_s,
        alpha_power=frame.alpha_power / baseline.alpha,
        beta_power=frame.beta_power / baseline.beta,
    )
