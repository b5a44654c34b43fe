"""Deterministic synthetic EEG for desk-scale closed-loop verification.

A synthetic subject is 1/f-shaped broadband noise plus narrowband oscillators
on chosen channels. During Modulated intent intervals (after a response
latency) each oscillator's amplitude is multiplied by its modulation gain,
emulating volitional band-power increases. Everything is a pure function of
the profile seed, so runs are bit-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Recording, TrialClass
from .errors import FormatError, InvalidSchedule
from .montage import CHANNELS_32, DEFAULT_ALPHA_CHANNELS, DEFAULT_BETA_CHANNELS
from .signals import FilterSpec, design_bandpass, filter_causal

DEFAULT_START_TIME = "2026-01-01T00:00:00Z"


@dataclass(frozen=True)
class Oscillator:
    """A narrowband source mixed into a set of channels.

    ``baseline_amplitude_uv`` is the RMS amplitude outside Modulated intent;
    during Modulated intent the amplitude is multiplied by ``modulation_gain``.
    """

    channels: tuple[str, ...]
    center_hz: float
    bandwidth_hz: float
    baseline_amplitude_uv: float
    modulation_gain: float

    def __post_init__(self) -> None:
        if self.bandwidth_hz <= 0:
            raise InvalidSchedule(f"bandwidth must be positive, got {self.bandwidth_hz}")
        if self.modulation_gain < 1.0:
            raise InvalidSchedule(
                f"modulation gain must be >= 1, got {self.modulation_gain}"
            )


@dataclass(frozen=True)
class SubjectProfile:
    background_noise_uv: float = 10.0
    oscillators: tuple[Oscillator, ...] = ()
    response_latency_s: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.response_latency_s < 0:
            raise InvalidSchedule(
                f"response latency must be >= 0, got {self.response_latency_s}"
            )


def strong_profile(
    beta_gain: float = 2.0, alpha_gain: float = 1.5, seed: int = 0
) -> SubjectProfile:
    """Subject with clear beta (sensorimotor) and alpha (parietal) modulation."""
    return SubjectProfile(
        background_noise_uv=10.0,
        oscillators=(
            Oscillator(DEFAULT_BETA_CHANNELS, 20.0, 6.0, 8.0, beta_gain),
            Oscillator(DEFAULT_ALPHA_CHANNELS, 10.0, 4.0, 8.0, alpha_gain),
        ),
        response_latency_s=0.5,
        seed=seed,
    )


def null_profile(seed: int = 0) -> SubjectProfile:
    """Subject whose oscillators never respond to intent (gain 1 everywhere)."""
    return SubjectProfile(
        background_noise_uv=10.0,
        oscillators=(
            Oscillator(DEFAULT_BETA_CHANNELS, 20.0, 6.0, 8.0, 1.0),
            Oscillator(DEFAULT_ALPHA_CHANNELS, 10.0, 4.0, 8.0, 1.0),
        ),
        response_latency_s=0.5,
        seed=seed,
    )


@dataclass(frozen=True)
class IntentInterval:
    onset_s: float
    offset_s: float
    intent: TrialClass

    def __post_init__(self) -> None:
        if self.offset_s <= self.onset_s:
            raise InvalidSchedule(
                f"interval offset {self.offset_s} must follow onset {self.onset_s}"
            )


@dataclass(frozen=True)
class IntentSchedule:
    intervals: tuple[IntentInterval, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "intervals", tuple(self.intervals))
        for prev, cur in zip(self.intervals, self.intervals[1:]):
            if cur.onset_s < prev.offset_s:
                raise InvalidSchedule(
                    f"intervals overlap at {cur.onset_s} < {prev.offset_s}"
                )


def write_profile(profile: SubjectProfile, path: str | Path) -> None:
    doc = {
        "background_noise_uv": profile.background_noise_uv,
        "oscillators": [
            {
                "channels": list(o.channels),
                "center_hz": o.center_hz,
                "bandwidth_hz": o.bandwidth_hz,
                "baseline_amplitude_uv": o.baseline_amplitude_uv,
                "modulation_gain": o.modulation_gain,
            }
            for o in profile.oscillators
        ],
        "response_latency_s": profile.response_latency_s,
        "seed": profile.seed,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def read_profile(path: str | Path) -> SubjectProfile:
    try:
        doc = json.loads(Path(path).read_text())
        return SubjectProfile(
            background_noise_uv=float(doc["background_noise_uv"]),
            oscillators=tuple(
                Oscillator(
                    channels=tuple(o["channels"]),
                    center_hz=float(o["center_hz"]),
                    bandwidth_hz=float(o["bandwidth_hz"]),
                    baseline_amplitude_uv=float(o["baseline_amplitude_uv"]),
                    modulation_gain=float(o["modulation_gain"]),
                )
                for o in doc["oscillators"]
            ),
            response_latency_s=float(doc["response_latency_s"]),
            seed=int(doc["seed"]),
        )
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"bad subject profile {path}: {exc}") from exc


def _pink_noise(rng: np.random.Generator, n: int, sample_rate_hz: float) -> np.ndarray:
    """1/f-power-shaped Gaussian noise, unit RMS.

    White noise is shaped in the frequency domain with amplitude weights
    f^-1/2 (power ~ 1/f), flat below 1 Hz to keep the variance finite.
    """
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate_hz)
    weights = 1.0 / np.sqrt(np.maximum(freqs, 1.0))
    shaped = np.fft.irfft(spectrum * weights, n=n)
    return shaped / shaped.std()


def _narrowband_noise(
    rng: np.random.Generator, n: int, center_hz: float, bandwidth_hz: float,
    sample_rate_hz: float,
) -> np.ndarray:
    """Band-limited Gaussian noise around center_hz, unit RMS."""
    spec = FilterSpec(
        center_hz - bandwidth_hz / 2.0,
        center_hz + bandwidth_hz / 2.0,
        sample_rate_hz=sample_rate_hz,
    )
    shaped = filter_causal(design_bandpass(spec), rng.standard_normal(n))[0]
    return shaped / shaped.std()


def _gain_envelope(
    schedule: IntentSchedule,
    gain: float,
    latency_s: float,
    n: int,
    sample_rate_hz: float,
) -> np.ndarray:
    env = np.ones(n)
    for interval in schedule.intervals:
        if interval.intent is not TrialClass.MODULATED:
            continue
        start = int(round((interval.onset_s + latency_s) * sample_rate_hz))
        stop = int(round((interval.offset_s + latency_s) * sample_rate_hz))
        env[max(start, 0) : min(stop, n)] = gain
    return env


def generate(
    profile: SubjectProfile,
    schedule: IntentSchedule,
    duration_s: float,
    sample_rate_hz: float = 512.0,
    start_time: str = DEFAULT_START_TIME,
) -> Recording:
    """Render a full recording for the given intent schedule.

    Deterministic per profile seed: base waveforms are drawn in a fixed order
    independent of the schedule, then intent envelopes scale the oscillators.
    The response latency shifts both onset and offset of every Modulated
    interval (the subject starts late and stops late).
    """
    for interval in schedule.intervals:
        if interval.offset_s > duration_s:
            raise InvalidSchedule(
                f"interval ending at {interval.offset_s}s exceeds duration "
                f"{duration_s}s"
            )
    n = int(round(duration_s * sample_rate_hz))
    rng = np.random.default_rng(profile.seed)
    samples = np.empty((len(CHANNELS_32), n), dtype=np.float64)
    for row in range(len(CHANNELS_32)):
        samples[row] = profile.background_noise_uv * _pink_noise(
            rng, n, sample_rate_hz
        )
    index = {name: i for i, name in enumerate(CHANNELS_32)}
    for osc in profile.oscillators:
        env = _gain_envelope(
            schedule, osc.modulation_gain, profile.response_latency_s, n,
            sample_rate_hz,
        )
        for name in osc.channels:
            wave = _narrowband_noise(
                rng, n, osc.center_hz, osc.bandwidth_hz, sample_rate_hz
            )
            samples[index[name]] += osc.baseline_amplitude_uv * wave * env
    return Recording(
        channel_names=CHANNELS_32,
        samples=samples,
        start_time=start_time,
        sample_rate_hz=sample_rate_hz,
    )
