"""Streaming inference: evidence accumulation, decisions, and tone feedback.

Each decoding output blends the newest calibrated posterior into an
exponentially smoothed evidence value (0.95 old, 0.05 new), compares it
against the Yes/No thresholds, and maps it to an auditory feedback command.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator, Optional, Protocol

import numpy as np

from .dataset import TrainedDecoder
from .errors import OutOfRange, OutOfRangePosterior, StreamEnded
from .montage import N_CHANNELS
from .signals import (
    BandBaseline,
    BandPowerFrame,
    FilterCoefficients,
    StreamFilterState,
    WINDOW_S,
    design_bandpass,
    filter_block,
    new_filter_state,
    normalize_frame,
)

SMOOTHING_OLD = 0.95
SMOOTHING_NEW = 0.05
DEFAULT_THRESHOLD = 0.6
TIMEOUT_S = 20.0
OUTPUT_PERIOD_S = 1.0
TONE_MODULATED_HZ = 370
TONE_BASELINE_HZ = 200


class Outcome(str, enum.Enum):
    YES = "Yes"
    NO = "No"
    TIMEOUT = "Timeout"


@dataclass(frozen=True)
class EvidenceState:
    """Accumulated Modulated-class evidence after ``samples_seen`` updates."""

    prob_modulated: float = 0.5
    smoothing_old: float = SMOOTHING_OLD
    smoothing_new: float = SMOOTHING_NEW
    samples_seen: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.prob_modulated <= 1.0:
            raise OutOfRange(
                f"evidence {self.prob_modulated} outside [0, 1]"
            )
        if abs(self.smoothing_old + self.smoothing_new - 1.0) > 1e-12:
            raise OutOfRange("smoothing factors must sum to 1")


@dataclass(frozen=True)
class DecisionConfig:
    yes_threshold: float = DEFAULT_THRESHOLD
    no_threshold: float = DEFAULT_THRESHOLD
    timeout_s: float = TIMEOUT_S
    output_period_s: float = OUTPUT_PERIOD_S

    def __post_init__(self) -> None:
        for name, value in (
            ("yes_threshold", self.yes_threshold),
            ("no_threshold", self.no_threshold),
        ):
            if not 0.5 < value <= 1.0:
                raise OutOfRange(f"{name} {value} outside (0.5, 1]")
        if self.timeout_s <= 0 or self.output_period_s <= 0:
            raise OutOfRange("timeout and output period must be positive")


@dataclass(frozen=True)
class ToneCommand:
    frequency_hz: int
    volume: float

    def __post_init__(self) -> None:
        if self.frequency_hz not in (TONE_BASELINE_HZ, TONE_MODULATED_HZ):
            raise OutOfRange(f"unsupported tone frequency {self.frequency_hz}")
        if not 0.0 <= self.volume <= 1.0:
            raise OutOfRange(f"volume {self.volume} outside [0, 1]")


@dataclass(frozen=True)
class Decision:
    outcome: Outcome
    decision_time_s: float


def accumulate(state: EvidenceState, p: float) -> EvidenceState:
    """Blend one posterior into the evidence: new = 0.95*old + 0.05*p."""
    if not 0.0 <= p <= 1.0:
        raise OutOfRangePosterior(f"posterior {p} outside [0, 1]")
    blended = state.smoothing_old * state.prob_modulated + state.smoothing_new * p
    return replace(
        state, prob_modulated=blended, samples_seen=state.samples_seen + 1
    )


def check_decision(
    state: EvidenceState, config: DecisionConfig, elapsed_s: float
) -> Optional[Decision]:
    """Yes wins first, then No on the complement, then the timeout."""
    if state.prob_modulated >= config.yes_threshold:
        return Decision(Outcome.YES, elapsed_s)
    if 1.0 - state.prob_modulated >= config.no_threshold:
        return Decision(Outcome.NO, elapsed_s)
    if elapsed_s >= config.timeout_s:
        return Decision(Outcome.TIMEOUT, config.timeout_s)
    return None


def feedback_command(state: EvidenceState) -> ToneCommand:
    """Tone choice and loudness for the current evidence.

    The Modulated tone plays only for evidence strictly above 0.5; at exactly
    0.5 the Baseline tone is selected but the volume is zero, so the choice
    is inaudible.
    """
    frequency = (
        TONE_MODULATED_HZ if state.prob_modulated > 0.5 else TONE_BASELINE_HZ
    )
    volume = min(max(2.0 * abs(state.prob_modulated - 0.5), 0.0), 1.0)
    return ToneCommand(frequency, volume)


OutputHook = Callable[[float, float, EvidenceState, ToneCommand], None]


def decode_posterior_stream(
    posteriors: Iterable[float],
    config: DecisionConfig = DecisionConfig(),
    *,
    first_output_s: float = WINDOW_S,
    initial: EvidenceState = EvidenceState(),
    on_output: Optional[OutputHook] = None,
    pace: Optional[Callable[[float], None]] = None,
) -> tuple[Decision, list[tuple[float, float]]]:
    """Consume posteriors lazily until a decision or the timeout.

    Outputs occur at first_output_s, then every output_period_s. Returns the
    decision and the (time, evidence) trace including the deciding step.
    Raises StreamEnded if the posterior source is exhausted first.
    """
    state = initial
    trace: list[tuple[float, float]] = []
    for i, p in enumerate(posteriors):
        t = first_output_s + i * config.output_period_s
        if pace is not None:
            pace(t)
        state = accumulate(state, p)
        trace.append((t, state.prob_modulated))
        decision = check_decision(state, config, elapsed_s=t)
        if on_output is not None:
            on_output(t, p, state, feedback_command(state))
        if decision is not None:
            return decision, trace
    raise StreamEnded("posterior stream ended before a decision or timeout")


class SampleStream(Protocol):
    def read(self, n_samples: int) -> np.ndarray: ...


@dataclass
class ArrayStream:
    """Cursor over a fixed (channels, time) array of samples."""

    samples: np.ndarray
    cursor: int = 0

    def read(self, n_samples: int) -> np.ndarray:
        end = self.cursor + n_samples
        if end > self.samples.shape[1]:
            raise StreamEnded(
                f"stream has {self.samples.shape[1] - self.cursor} samples"
                f" left, needed {n_samples}"
            )
        block = self.samples[:, self.cursor : end]
        self.cursor = end
        return block


@dataclass
class BandPipeline:
    """Causal filter plus a rolling window of squared output samples.

    A pipeline can be shared across consecutive trials of one run so the
    filter state stays continuous from the first sample of the recording;
    block-partition invariance of the filter then makes streamed output
    match whole-recording filtering bit for bit.
    """

    coeffs: FilterCoefficients
    state: StreamFilterState
    window_n: int
    buffer: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.buffer = np.empty((self.state.n_channels, 0))

    def push(self, block: np.ndarray) -> None:
        filtered, self.state = filter_block(self.coeffs, self.state, block)
        squared = np.square(filtered)
        joined = np.concatenate([self.buffer, squared], axis=1)
        self.buffer = joined[:, -self.window_n :]

    def window_power(self, last_n: Optional[int] = None) -> np.ndarray:
        if last_n is None:
            return self.buffer.mean(axis=1)
        if last_n > self.buffer.shape[1]:
            raise StreamEnded(
                f"window of {last_n} samples requested, pipeline holds "
                f"{self.buffer.shape[1]}"
            )
        return self.buffer[:, -last_n:].mean(axis=1)


def band_pipelines_for(
    decoder: TrainedDecoder,
    alpha_state: Optional[StreamFilterState] = None,
    beta_state: Optional[StreamFilterState] = None,
) -> tuple[BandPipeline, BandPipeline]:
    """Fresh (or pre-warmed) alpha and beta pipelines for a decoder."""
    fs = decoder.alpha_filter.sample_rate_hz
    window_n = int(round(decoder.window_s * fs))
    alpha_coeffs = design_bandpass(decoder.alpha_filter)
    beta_coeffs = design_bandpass(decoder.beta_filter)
    return (
        BandPipeline(
            alpha_coeffs,
            alpha_state or new_filter_state(alpha_coeffs, N_CHANNELS),
            window_n,
        ),
        BandPipeline(
            beta_coeffs,
            beta_state or new_filter_state(beta_coeffs, N_CHANNELS),
            window_n,
        ),
    )


def run_trial_decoding(
    decoder: TrainedDecoder,
    stream: SampleStream,
    config: DecisionConfig = DecisionConfig(),
    *,
    baseline: BandBaseline,
    alpha_state: Optional[StreamFilterState] = None,
    beta_state: Optional[StreamFilterState] = None,
    posterior_fn: Optional[Callable[[np.ndarray], float]] = None,
    on_output: Optional[OutputHook] = None,
    pace: Optional[Callable[[float], None]] = None,
) -> tuple[Decision, list[tuple[float, float]]]:
    """Decode one trial from a sample stream positioned at decoding onset.

    Filter states may be passed in pre-warmed from earlier samples of the
    same run so that streaming decoding matches whole-recording filtering
    bit for bit. Evidence always starts at 0.5. ``posterior_fn`` substitutes
    the decoder's posterior (the feature vector is still computed), which
    supports injection of known posterior sequences.
    """
    alpha, beta = band_pipelines_for(decoder, alpha_state, beta_state)
    return decode_trial_with_pipelines(
        decoder,
        stream,
        alpha,
        beta,
        config,
        baseline=baseline,
        posterior_fn=posterior_fn,
        on_output=on_output,
        pace=pace,
    )


def decode_trial_with_pipelines(
    decoder: TrainedDecoder,
    stream: SampleStream,
    alpha: BandPipeline,
    beta: BandPipeline,
    config: DecisionConfig = DecisionConfig(),
    *,
    baseline: BandBaseline,
    posterior_fn: Optional[Callable[[np.ndarray], float]] = None,
    on_output: Optional[OutputHook] = None,
    pace: Optional[Callable[[float], None]] = None,
) -> tuple[Decision, list[tuple[float, float]]]:
    """Decode one trial on caller-owned pipelines.

    The caller keeps the pipelines, so their filter states continue past the
    decision into whatever samples follow (the next trial of the run).
    """
    fs = decoder.alpha_filter.sample_rate_hz
    window_n = int(round(decoder.window_s * fs))
    step_n = int(round(decoder.step_s * fs))

    def posteriors() -> Iterator[float]:
        need = window_n
        t = decoder.window_s
        while True:
            block = stream.read(need)
            alpha.push(block)
            beta.push(block)
            frame = normalize_frame(
                BandPowerFrame(
                    t, alpha.window_power(window_n), beta.window_power(window_n)
                ),
                baseline,
            )
            features = np.concatenate([frame.alpha_power, frame.beta_power])
            if posterior_fn is not None:
                yield float(posterior_fn(features))
            else:
                yield decoder.posterior(features)
            need = step_n
            t += decoder.step_s

    return decode_posterior_stream(
        posteriors(),
        config,
        first_output_s=decoder.window_s,
        on_output=on_output,
        pace=pace,
    )
