"""Persistence and trial epoching.

File formats (all with explicit schema_version fields):

* recordings: ``VBCI`` magic, little-endian uint32 header length, UTF-8 JSON
  header, then the sample payload as little-endian float32 interleaved by
  time (sample-major). Stream-appendable and trivial to parse anywhere.
* run manifests and trained decoders: JSON documents.
* session logs: JSON lines, append-only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    ChannelCountMismatch,
    DecoderLoadError,
    EventOutOfBounds,
    FeatureMismatch,
    FormatError,
    InvalidSchedule,
)
from .montage import CHANNELS_32, N_CHANNELS, feature_index
from .signals import (
    ALPHA_BAND_HZ,
    BETA_BAND_HZ,
    STEP_S,
    WINDOW_S,
    BandBaseline,
    FilterSpec,
    PhaseMode,
    band_power_frames,
    design_bandpass,
    filter_causal,
    filter_zero_phase,
    normalize_frame,
    window_mean_power,
)

RECORDING_MAGIC = b"VBCI"
SCHEMA_VERSION = 1


class RunType(str, Enum):
    OFFLINE = "Offline"
    STANDARD_ONLINE = "StandardOnline"
    ASSISTIVE_ONLINE = "AssistiveOnline"


class TrialClass(str, Enum):
    MODULATED = "Modulated"
    BASELINE = "Baseline"
    UNKNOWN = "Unknown"


class BaselineMode(str, Enum):
    PRE_FEEDBACK = "pre_feedback"  # final second before the feedback region
    REST_END = "rest_end"  # final second of the rest period


@dataclass
class Recording:
    """Multichannel EEG samples in microvolts, channels x time.

    Samples are held as float32 so that disk round-trips are bit-exact and
    live/replay paths consume identical source values.
    """

    channel_names: tuple[str, ...]
    samples: np.ndarray
    start_time: str
    sample_rate_hz: float = 512.0

    def __post_init__(self) -> None:
        self.channel_names = tuple(self.channel_names)
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 2:
            raise ChannelCountMismatch(
                f"samples must be channels x time, got shape {self.samples.shape}"
            )
        if len(set(self.channel_names)) != len(self.channel_names):
            raise ChannelCountMismatch("channel names must be unique")
        if len(self.channel_names) != self.samples.shape[0]:
            raise ChannelCountMismatch(
                f"{len(self.channel_names)} channel names for "
                f"{self.samples.shape[0]} sample rows"
            )

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz


def write_recording(recording: Recording, path: str | Path) -> None:
    header = {
        "schema_version": SCHEMA_VERSION,
        "sample_rate_hz": recording.sample_rate_hz,
        "channel_names": list(recording.channel_names),
        "start_time": recording.start_time,
        "n_samples": recording.n_samples,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(recording.samples.T).astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(RECORDING_MAGIC)
        fh.write(len(header_bytes).to_bytes(4, "little"))
        fh.write(header_bytes)
        fh.write(payload)


def read_recording(path: str | Path) -> Recording:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != RECORDING_MAGIC:
            raise FormatError(f"bad magic {magic!r} in {path}")
        length_bytes = fh.read(4)
        if len(length_bytes) < 4:
            raise FormatError(f"truncated header length in {path}")
        header_len = int.from_bytes(length_bytes, "little")
        header_bytes = fh.read(header_len)
        if len(header_bytes) < header_len:
            raise FormatError(f"truncated header in {path}")
        try:
            header = json.loads(header_bytes.decode("utf-8"))
        except ValueError as exc:
            raise FormatError(f"unparseable header in {path}: {exc}") from exc
        if header.get("schema_version") != SCHEMA_VERSION:
            raise FormatError(
                f"unsupported schema_version {header.get('schema_version')!r}"
            )
        payload = fh.read()
    channel_names = tuple(header["channel_names"])
    n_samples = int(header["n_samples"])
    expected = 4 * n_samples * len(channel_names)
    if len(payload) != expected:
        raise FormatError(
            f"payload holds {len(payload)} bytes, header implies {expected}"
        )
    flat = np.frombuffer(payload, dtype="<f4")
    samples = np.ascontiguousarray(flat.reshape(n_samples, len(channel_names)).T)
    return Recording(
        channel_names=channel_names,
        samples=samples,
        start_time=header["start_time"],
        sample_rate_hz=float(header["sample_rate_hz"]),
    )


@dataclass(frozen=True)
class TrialEvent:
    """One trial's phase onsets, in seconds from recording start."""

    trial_index: int
    run_type: RunType
    true_class: TrialClass
    rest_onset_s: float
    cue_onset_s: float
    feedback_onset_s: float
    trial_end_s: float
    question_text: str | None = None

    def __post_init__(self) -> None:
        if not (
            self.rest_onset_s
            < self.cue_onset_s
            < self.feedback_onset_s
            < self.trial_end_s
        ):
            raise InvalidSchedule(
                f"trial {self.trial_index}: phase onsets out of order "
                f"({self.rest_onset_s}, {self.cue_onset_s}, "
                f"{self.feedback_onset_s}, {self.trial_end_s})"
            )
        if (
            self.true_class is TrialClass.UNKNOWN
            and self.run_type is not RunType.ASSISTIVE_ONLINE
        ):
            raise InvalidSchedule(
                f"trial {self.trial_index}: class Unknown is only valid for "
                "assistive runs"
            )


def _split_fractions(trials) -> dict[str, float]:
    counts: dict[str, int] = {}
    for t in trials:
        counts[t.true_class.value] = counts.get(t.true_class.value, 0) + 1
    return {k: v / len(trials) for k, v in sorted(counts.items())}


@dataclass
class RunManifest:
    """Ordered trial events for one run of one recording."""

    run_id: str
    recording_path: str
    trials: tuple[TrialEvent, ...]
    class_split: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.trials = tuple(self.trials)
        if not 4 <= len(self.trials) <= 20:
            raise InvalidSchedule(
                f"run {self.run_id}: expected 4..20 trials, got {len(self.trials)}"
            )
        for prev, cur in zip(self.trials, self.trials[1:]):
            if cur.rest_onset_s < prev.trial_end_s:
                raise InvalidSchedule(
                    f"run {self.run_id}: trial {cur.trial_index} overlaps "
                    f"trial {prev.trial_index}"
                )
            if cur.trial_index <= prev.trial_index:
                raise InvalidSchedule(
                    f"run {self.run_id}: trial indices not increasing"
                )
        if not self.class_split:
            self.class_split = _split_fractions(self.trials)


def write_manifest(manifest: RunManifest, path: str | Path) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "run_id": manifest.run_id,
        "recording_path": manifest.recording_path,
        "class_split": manifest.class_split,
        "trials": [
            {
                "trial_index": t.trial_index,
                "run_type": t.run_type.value,
                "true_class": t.true_class.value,
                "rest_onset_s": t.rest_onset_s,
                "cue_onset_s": t.cue_onset_s,
                "feedback_onset_s": t.feedback_onset_s,
                "trial_end_s": t.trial_end_s,
                "question_text": t.question_text,
            }
            for t in manifest.trials
        ],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def read_manifest(path: str | Path) -> RunManifest:
    try:
        doc = json.loads(Path(path).read_text())
    except ValueError as exc:
        raise FormatError(f"unparseable manifest {path}: {exc}") from exc
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"unsupported schema_version {doc.get('schema_version')!r}")
    try:
        trials = tuple(
            TrialEvent(
                trial_index=t["trial_index"],
                run_type=RunType(t["run_type"]),
                true_class=TrialClass(t["true_class"]),
                rest_onset_s=t["rest_onset_s"],
                cue_onset_s=t["cue_onset_s"],
                feedback_onset_s=t["feedback_onset_s"],
                trial_end_s=t["trial_end_s"],
                question_text=t.get("question_text"),
            )
            for t in doc["trials"]
        )
        return RunManifest(
            run_id=doc["run_id"],
            recording_path=doc["recording_path"],
            trials=trials,
            class_split=doc.get("class_split", {}),
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad manifest {path}: {exc}") from exc


@dataclass
class TrainedDecoder:
    """Everything online inference needs, as trained offline.

    ``selected_features`` holds (channel_index, band_index) pairs; the flat
    feature index is band_index * 32 + channel_index. Decision scores apply
    the stored per-feature standardization before the linear model, and the
    calibrated posterior for the Modulated class is 1/(1+exp(a*s+b)).
    """

    selected_features: tuple[tuple[int, int], ...]
    svm_weights: np.ndarray
    svm_bias: float
    feature_means: np.ndarray
    feature_scales: np.ndarray
    calibration_a: float
    calibration_b: float
    alpha_filter: FilterSpec = FilterSpec(*ALPHA_BAND_HZ)
    beta_filter: FilterSpec = FilterSpec(*BETA_BAND_HZ)
    window_s: float = WINDOW_S
    step_s: float = STEP_S

    def __post_init__(self) -> None:
        self.selected_features = tuple(
            (int(c), int(b)) for c, b in self.selected_features
        )
        self.svm_weights = np.asarray(self.svm_weights, dtype=np.float64)
        self.feature_means = np.asarray(self.feature_means, dtype=np.float64)
        self.feature_scales = np.asarray(self.feature_scales, dtype=np.float64)
        n = len(self.selected_features)
        if not 4 <= n <= 20:
            raise FeatureMismatch(f"expected 4..20 selected features, got {n}")
        for arr, name in (
            (self.svm_weights, "weights"),
            (self.feature_means, "means"),
            (self.feature_scales, "scales"),
        ):
            if arr.shape != (n,):
                raise FeatureMismatch(f"{name} shape {arr.shape} for {n} features")

    @property
    def feature_indices(self) -> np.ndarray:
        return np.array(
            [feature_index(c, b) for c, b in self.selected_features], dtype=np.intp
        )

    def decision_score(self, features64: np.ndarray) -> float:
        x = np.asarray(features64, dtype=np.float64)
        if x.shape != (2 * N_CHANNELS,):
            raise FeatureMismatch(f"expected {2 * N_CHANNELS} features, got {x.shape}")
        z = (x[self.feature_indices] - self.feature_means) / self.feature_scales
        return float(z @ self.svm_weights + self.svm_bias)

    def posterior(self, features64: np.ndarray) -> float:
        s = self.decision_score(features64)
        return float(
            1.0 / (1.0 + np.exp(self.calibration_a * s + self.calibration_b))
        )


def _filter_spec_doc(spec: FilterSpec) -> dict:
    return {
        "low_cut_hz": spec.low_cut_hz,
        "high_cut_hz": spec.high_cut_hz,
        "prototype_order": spec.prototype_order,
        "sample_rate_hz": spec.sample_rate_hz,
    }


def write_decoder(decoder: TrainedDecoder, path: str | Path) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "selected_features": [list(p) for p in decoder.selected_features],
        "svm_weights": decoder.svm_weights.tolist(),
        "svm_bias": decoder.svm_bias,
        "feature_means": decoder.feature_means.tolist(),
        "feature_scales": decoder.feature_scales.tolist(),
        "calibration_a": decoder.calibration_a,
        "calibration_b": decoder.calibration_b,
        "alpha_filter": _filter_spec_doc(decoder.alpha_filter),
        "beta_filter": _filter_spec_doc(decoder.beta_filter),
        "window_s": decoder.window_s,
        "step_s": decoder.step_s,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def read_decoder(path: str | Path) -> TrainedDecoder:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise DecoderLoadError(f"cannot load decoder {path}: {exc}") from exc
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DecoderLoadError(
            f"unsupported schema_version {doc.get('schema_version')!r}"
        )
    try:
        return TrainedDecoder(
            selected_features=tuple(tuple(p) for p in doc["selected_features"]),
            svm_weights=np.array(doc["svm_weights"]),
            svm_bias=float(doc["svm_bias"]),
            feature_means=np.array(doc["feature_means"]),
            feature_scales=np.array(doc["feature_scales"]),
            calibration_a=float(doc["calibration_a"]),
            calibration_b=float(doc["calibration_b"]),
            alpha_filter=FilterSpec(**doc["alpha_filter"]),
            beta_filter=FilterSpec(**doc["beta_filter"]),
            window_s=float(doc["window_s"]),
            step_s=float(doc["step_s"]),
        )
    except (KeyError, TypeError, ValueError, FeatureMismatch) as exc:
        raise DecoderLoadError(f"bad decoder file {path}: {exc}") from exc


def append_jsonl(path: str | Path, record: dict) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                records.append(json.loads(raw))
            except ValueError as exc:
                raise FormatError(f"line {lineno}: invalid JSON ({exc})") from exc
    return records


@dataclass(frozen=True)
class EpochingConfig:
    alpha_filter: FilterSpec = FilterSpec(*ALPHA_BAND_HZ)
    beta_filter: FilterSpec = FilterSpec(*BETA_BAND_HZ)
    window_s: float = WINDOW_S
    step_s: float = STEP_S
    baseline_mode: BaselineMode = BaselineMode.PRE_FEEDBACK
    baseline_duration_s: float = 1.0
    rest_duration_s: float = 8.0  # used only by BaselineMode.REST_END


@dataclass
class TrialFrames:
    """Labeled per-frame feature rows for one run.

    Feature columns follow the fixed ordering: alpha for each montage channel
    (indices 0..31), then beta (32..63).
    """

    run_id: str
    features: np.ndarray  # (n_frames, 64)
    labels: tuple[TrialClass, ...]
    trial_indices: np.ndarray  # (n_frames,)


def _filter_per_spec(spec: FilterSpec, samples: np.ndarray) -> np.ndarray:
    """Filter a whole recording honoring the spec's phase mode."""
    coeffs = design_bandpass(spec)
    if spec.phase_mode is PhaseMode.ZERO_PHASE:
        return filter_zero_phase(coeffs, samples)
    return filter_causal(coeffs, samples)


def epoch_trials(
    recording: Recording,
    manifest: RunManifest,
    config: EpochingConfig = EpochingConfig(),
) -> TrialFrames:
    """Slice a recording into normalized band-power feature frames.

    Per trial: the baseline is the mean power over the configured pre-feedback
    second (or the final second of rest), and frames cover the feedback region
    with the standard window/step, labeled with the trial's class. Only frames
    whose full window lies inside the region are produced.
    """
    if tuple(recording.channel_names) != CHANNELS_32:
        raise ChannelCountMismatch(
            "epoching expects the standard 32-channel montage"
        )
    fs = recording.sample_rate_hz
    alpha = _filter_per_spec(config.alpha_filter, recording.samples)
    beta = _filter_per_spec(config.beta_filter, recording.samples)
    sq_alpha = alpha * alpha
    sq_beta = beta * beta

    win_n = int(round(config.window_s * fs))
    step_n = int(round(config.step_s * fs))
    base_n = int(round(config.baseline_duration_s * fs))

    rows: list[np.ndarray] = []
    labels: list[TrialClass] = []
    trial_indices: list[int] = []
    for trial in manifest.trials:
        feedback_n = int(round(trial.feedback_onset_s * fs))
        end_n = int(round(trial.trial_end_s * fs))
        if config.baseline_mode is BaselineMode.PRE_FEEDBACK:
            base_start = feedback_n - base_n
        else:
            rest_end = int(round((trial.rest_onset_s + config.rest_duration_s) * fs))
            base_start = rest_end - base_n
        if base_start < 0 or end_n > recording.n_samples:
            raise EventOutOfBounds(
                f"trial {trial.trial_index} spans [{base_start}, {end_n}) samples, "
                f"recording has {recording.n_samples}"
            )
        baseline = BandBaseline(
            alpha=window_mean_power(sq_alpha, base_start, base_n),
            beta=window_mean_power(sq_beta, base_start, base_n),
        )
        region_alpha = alpha[:, feedback_n:end_n]
        region_beta = beta[:, feedback_n:end_n]
        if region_alpha.shape[1] < win_n:
            continue
        for frame in band_power_frames(
            region_alpha, region_beta, config.window_s, config.step_s, fs
        ):
            normed = normalize_frame(frame, baseline)
            rows.append(np.concatenate([normed.alpha_power, normed.beta_power]))
            labels.append(trial.true_class)
            trial_indices.append(trial.trial_index)
    features = (
        np.vstack(rows) if rows else np.empty((0, 2 * N_CHANNELS), dtype=np.float64)
    )
    return TrialFrames(
        run_id=manifest.run_id,
        features=features,
        labels=tuple(labels),
        trial_indices=np.asarray(trial_indices, dtype=np.intp),
    )
