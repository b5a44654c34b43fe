"""Performance metrics and permutation statistics for decoding sessions.

Everything here is a pure function of recorded traces, labels, or feature
frames; reports for plotting are emitted as plain dicts and arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dataset import TrialClass, TrialFrames
from .errors import (
    DegenerateLabels,
    EmptyInput,
    EmptyTrace,
    LengthMismatch,
    OutOfRange,
    TooFewSamples,
)
from .montage import ALPHA, BETA, CHANNELS_32, N_CHANNELS
from .online import Decision, Outcome
from .protocol import ConfidenceRating, score_confidence, RatingOutcome

DEFAULT_HIT_THRESHOLD = 0.6
CHANCE_KAPPA_PERMUTATIONS = 10_000
CHANNEL_TEST_SHUFFLES = 1_000


@dataclass(frozen=True)
class KappaResult:
    """Agreement beyond chance between predicted and true labels."""

    kappa: float
    p_a: float
    p_e: float


@dataclass(frozen=True)
class TrialTrace:
    """One trial's evidence trajectory with its ground truth and decision."""

    trial_index: int
    true_class: TrialClass
    points: tuple[tuple[float, float], ...]
    decision: Optional[Decision] = None

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "points",
            tuple((float(t), float(p)) for t, p in self.points),
        )
        times = [t for t, _ in self.points]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise OutOfRange("trace timestamps must strictly increase")

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([p for _, p in self.points])


def _counts(labels: Sequence, classes: Sequence) -> np.ndarray:
    return np.array([sum(1 for x in labels if x == c) for c in classes])


def cohen_kappa(predicted: Sequence, true: Sequence) -> KappaResult:
    """Observed agreement corrected by the marginal chance agreement.

    Classes are the union of both label sets, so a predicted-only label
    (for example a timeout marker) lowers agreement without crashing.
    When the chance agreement is exactly 1 the statistic is declared 0.
    """
    if len(predicted) != len(true):
        raise LengthMismatch(
            f"{len(predicted)} predictions vs {len(true)} truths"
        )
    if len(true) == 0:
        raise EmptyInput("no labels")
    n = len(true)
    classes = sorted(set(predicted) | set(true), key=repr)
    p_a = sum(1 for p, t in zip(predicted, true) if p == t) / n
    # integer count products, single final division: exact in binary floats
    p_e = float(_counts(predicted, classes) @ _counts(true, classes)) / (n * n)
    if p_e >= 1.0:
        return KappaResult(0.0, p_a, p_e)
    return KappaResult((p_a - p_e) / (1.0 - p_e), p_a, p_e)


def chance_kappa(
    true: Sequence,
    n_perm: int = CHANCE_KAPPA_PERMUTATIONS,
    seed: int = 0,
) -> float:
    """Mean kappa of the true labels against random permutations of them."""
    if len(true) == 0:
        raise EmptyInput("no labels")
    labels = list(true)
    classes = sorted(set(labels), key=repr)
    codes = np.array([classes.index(x) for x in labels])
    n = codes.size
    counts = np.bincount(codes, minlength=len(classes))
    p_e = float(counts @ counts) / (n * n)  # permutations keep both marginals
    if p_e >= 1.0:
        return 0.0
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(n_perm):
        p_a = float(np.mean(codes[rng.permutation(n)] == codes))
        total += (p_a - p_e) / (1.0 - p_e)
    return total / n_perm


def bar_dynamics(trace: TrialTrace) -> float:
    """Percentage of outputs strictly favoring the true class.

    An output of exactly 0.5 favors neither class and never counts.
    """
    if not trace.points:
        raise EmptyTrace(f"trial {trace.trial_index} has no outputs")
    probs = trace.probabilities
    if trace.true_class is TrialClass.MODULATED:
        favored = probs > 0.5
    elif trace.true_class is TrialClass.BASELINE:
        favored = probs < 0.5
    else:
        raise DegenerateLabels("bar dynamics needs a binary true class")
    return float(np.mean(favored) * 100.0)


def _first_crossing(
    trace: TrialTrace, threshold: float
) -> Optional[tuple[Outcome, float]]:
    for t, p in trace.points:
        if p >= threshold:
            return Outcome.YES, t
        if 1.0 - p >= threshold:
            return Outcome.NO, t
    return None


def _expected_outcome(true_class: TrialClass) -> Outcome:
    if true_class is TrialClass.MODULATED:
        return Outcome.YES
    if true_class is TrialClass.BASELINE:
        return Outcome.NO
    raise DegenerateLabels("trace lacks a binary true class")


def hits_at_threshold(
    traces: Sequence[TrialTrace], threshold: float = DEFAULT_HIT_THRESHOLD
) -> float:
    """Percentage of trials whose first threshold crossing matches truth.

    Trials that never cross either side count as misses.
    """
    if not traces:
        raise EmptyInput("no traces")
    hits = 0
    for trace in traces:
        crossing = _first_crossing(trace, threshold)
        if crossing is not None and crossing[0] is _expected_outcome(
            trace.true_class
        ):
            hits += 1
    return 100.0 * hits / len(traces)


def latency_to_correct_hit(
    trace: TrialTrace, threshold: float = DEFAULT_HIT_THRESHOLD
) -> Optional[float]:
    """Seconds from decoding onset until the correct side reaches threshold."""
    want = _expected_outcome(trace.true_class)
    for t, p in trace.points:
        evidence = p if want is Outcome.YES else 1.0 - p
        if evidence >= threshold:
            return t
    return None


def channel_permutation_test(
    samples_a: np.ndarray,
    samples_b: np.ndarray,
    n_shuffles: int = CHANNEL_TEST_SHUFFLES,
    seed: int = 0,
) -> np.ndarray:
    """Two-tailed permutation p-value of the per-channel mean difference.

    One shared row shuffle per iteration is applied to every channel, which
    mirrors physically relabeling whole trials. A shuffle counts against the
    null when its absolute difference equals or exceeds the observed one, so
    p = 0 means "never reached in n_shuffles" (display as < 1/n).
    """
    a = np.atleast_2d(np.asarray(samples_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(samples_b, dtype=np.float64))
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise TooFewSamples("each group needs at least 2 rows")
    if a.shape[1] != b.shape[1]:
        raise LengthMismatch("groups disagree on channel count")
    observed = np.abs(a.mean(axis=0) - b.mean(axis=0))
    pooled = np.vstack([a, b])
    n_a = a.shape[0]
    rng = np.random.default_rng(seed)
    exceed = np.zeros(a.shape[1], dtype=np.int64)
    for _ in range(n_shuffles):
        perm = rng.permutation(pooled.shape[0])
        diff = np.abs(
            pooled[perm[:n_a]].mean(axis=0) - pooled[perm[n_a:]].mean(axis=0)
        )
        exceed += diff >= observed
    return exceed / n_shuffles


def format_p_value(p: float, n_shuffles: int = CHANNEL_TEST_SHUFFLES) -> str:
    """Human-readable p that never overstates an all-miss permutation run."""
    if p == 0.0:
        return f"< {1.0 / n_shuffles:g}"
    return f"{p:g}"


def bh_correct(p_values: Sequence[float]) -> np.ndarray:
    """Step-up false-discovery-rate adjustment, back in input order.

    adjusted for the i-th smallest p is min over j >= i of (m * p_(j) / j),
    clamped to 1.
    """
    p = np.asarray(p_values, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise EmptyInput("need a flat non-empty p-value vector")
    if np.any((p < 0) | (p > 1)):
        raise OutOfRange("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    ranked = np.minimum.accumulate(ranked[::-1])[::-1]
    ranked = np.minimum(ranked, 1.0)
    out = np.empty(m)
    out[order] = ranked
    return out


@dataclass(frozen=True)
class ChannelTestResult:
    """Per-channel permutation test with multiplicity correction."""

    channel_names: tuple[str, ...]
    observed_difference: np.ndarray
    raw_p: np.ndarray
    adjusted_p: np.ndarray


def channel_difference_test(
    samples_a: np.ndarray,
    samples_b: np.ndarray,
    n_shuffles: int = CHANNEL_TEST_SHUFFLES,
    seed: int = 0,
    channel_names: tuple[str, ...] = CHANNELS_32,
) -> ChannelTestResult:
    raw = channel_permutation_test(samples_a, samples_b, n_shuffles, seed)
    a = np.atleast_2d(np.asarray(samples_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(samples_b, dtype=np.float64))
    return ChannelTestResult(
        channel_names=tuple(channel_names),
        observed_difference=a.mean(axis=0) - b.mean(axis=0),
        raw_p=raw,
        adjusted_p=bh_correct(raw),
    )


def _band_columns(band: int | str) -> slice:
    if isinstance(band, str):
        band = {"alpha": ALPHA, "beta": BETA}[band.lower()]
    if band not in (ALPHA, BETA):
        raise OutOfRange(f"band must be alpha or beta, got {band}")
    return slice(band * N_CHANNELS, (band + 1) * N_CHANNELS)


def _class_frame_rows(
    runs: Sequence[TrialFrames], cols: slice
) -> tuple[list, list]:
    mod_rows, base_rows = [], []
    for frames in runs:
        for row, label in zip(frames.features, frames.labels):
            if label is TrialClass.MODULATED:
                mod_rows.append(row[cols])
            elif label is TrialClass.BASELINE:
                base_rows.append(row[cols])
    if not mod_rows or not base_rows:
        raise DegenerateLabels("need frames from both classes")
    return mod_rows, base_rows


def class_band_samples(
    runs: Sequence[TrialFrames], band: int | str
) -> tuple[np.ndarray, np.ndarray]:
    """Per-trial mean band-power rows split by class, pooled over runs.

    The permutation test's exchangeability unit is the trial: frames inside
    one trial overlap in time and share a baseline, so each trial collapses
    to the mean of its frames rather than contributing dependent rows.
    """
    cols = _band_columns(band)
    mod_rows, base_rows = [], []
    for frames in runs:
        for trial in np.unique(frames.trial_indices):
            mask = frames.trial_indices == trial
            label = frames.labels[int(np.argmax(mask))]
            row = frames.features[mask][:, cols].mean(axis=0)
            if label is TrialClass.MODULATED:
                mod_rows.append(row)
            elif label is TrialClass.BASELINE:
                base_rows.append(row)
    if not mod_rows or not base_rows:
        raise DegenerateLabels("need trials from both classes")
    return np.array(mod_rows), np.array(base_rows)


def topo_class_difference(
    runs: Sequence[TrialFrames], band: int | str
) -> dict:
    """Per-channel Modulated-minus-Baseline mean band power with labels."""
    mod_rows, base_rows = _class_frame_rows(runs, _band_columns(band))
    band_name = "alpha" if _band_columns(band).start == 0 else "beta"
    difference = np.array(mod_rows).mean(axis=0) - np.array(base_rows).mean(axis=0)
    return {
        "band": band_name,
        "channels": list(CHANNELS_32),
        "difference": difference.tolist(),
    }


def assistive_truth(
    decision: Decision, rating: ConfidenceRating
) -> Optional[TrialClass]:
    """Ground truth reconstructed from the caretaker's confidence rating.

    A confident rating endorses the decoded answer; a low rating implies the
    opposite answer was intended. A timeout leaves no decoded answer to
    endorse, so no truth can be assigned.
    """
    if decision.outcome is Outcome.TIMEOUT:
        return None
    decoded = (
        TrialClass.MODULATED
        if decision.outcome is Outcome.YES
        else TrialClass.BASELINE
    )
    if score_confidence(rating) is RatingOutcome.CORRECT:
        return decoded
    return (
        TrialClass.BASELINE
        if decoded is TrialClass.MODULATED
        else TrialClass.MODULATED
    )


@dataclass(frozen=True)
class TraceSummary:
    """Headline decoding metrics over a set of trials."""

    n_trials: int
    n_timeouts: int
    kappa: KappaResult
    bar_dynamics_mean: float
    hits_percent: float
    mean_latency_s: Optional[float]

    def as_dict(self) -> dict:
        return {
            "n_trials": self.n_trials,
            "n_timeouts": self.n_timeouts,
            "kappa": self.kappa.kappa,
            "accuracy": self.kappa.p_a,
            "chance_agreement": self.kappa.p_e,
            "bar_dynamics_mean": self.bar_dynamics_mean,
            "hits_percent": self.hits_percent,
            "mean_latency_s": self.mean_latency_s,
        }


def summarize_traces(
    traces: Sequence[TrialTrace],
    threshold: float = DEFAULT_HIT_THRESHOLD,
) -> TraceSummary:
    """Kappa, bar dynamics, hit rate, and latency for recorded trials.

    Kappa compares decided outcomes (timeouts kept as their own label)
    against the true classes; latency averages only trials whose correct
    side reached the threshold.
    """
    if not traces:
        raise EmptyInput("no traces")
    predicted = []
    for trace in traces:
        if trace.decision is None:
            raise EmptyInput(
                f"trial {trace.trial_index} has no recorded decision"
            )
        predicted.append(trace.decision.outcome.value)
    true = [_expected_outcome(t.true_class).value for t in traces]
    latencies = [
        lat
        for lat in (latency_to_correct_hit(t, threshold) for t in traces)
        if lat is not None
    ]
    return TraceSummary(
        n_trials=len(traces),
        n_timeouts=sum(
            1 for t in traces if t.decision.outcome is Outcome.TIMEOUT
        ),
        kappa=cohen_kappa(predicted, true),
        bar_dynamics_mean=float(
            np.mean([bar_dynamics(t) for t in traces])
        ),
        hits_percent=hits_at_threshold(traces, threshold),
        mean_latency_s=float(np.mean(latencies)) if latencies else None,
    )
