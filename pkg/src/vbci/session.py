"""Closed-loop session execution: clocks, event logs, subjects, and runs.

A session plays a plan of runs against a subject source. Offline runs lay
down labeled recordings for decoder training; online runs decode answers
live with continuous per-run filter state, so a later replay of the saved
recording reproduces the decision sequence bit for bit. Every observable
step is emitted as a sequenced event and mirrored to an append-only
JSON-lines log.
"""

from __future__ import annotations

import json
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence, Union

import numpy as np

from .dataset import (
    BaselineMode,
    Recording,
    RunManifest,
    RunType,
    SCHEMA_VERSION,
    TrainedDecoder,
    TrialClass,
    TrialEvent,
    write_manifest,
    write_recording,
)
from .errors import (
    AbortRequested,
    ChannelCountMismatch,
    FormatError,
    HardwareUnavailable,
    InvalidSchedule,
    StreamEnded,
    VersionMismatch,
)
from .metrics import TrialTrace
from .montage import CHANNELS_32, N_CHANNELS
from .online import (
    ArrayStream,
    BandPipeline,
    Decision,
    DecisionConfig,
    Outcome,
    band_pipelines_for,
    decode_trial_with_pipelines,
)
from .protocol import (
    AssistiveNode,
    AssistiveTree,
    ConfidenceRating,
    PhaseInterval,
    ProtocolTiming,
    QuestionItem,
    TrialPhase,
    build_offline_timeline,
    build_online_timeline,
    class_sequence,
    phase_onset,
    plan_standard_run,
    ramp_volume,
    score_confidence,
)
from .signals import BandBaseline
from .synth import (
    DEFAULT_START_TIME,
    IntentInterval,
    IntentSchedule,
    SubjectProfile,
    generate,
    null_profile,
    read_profile,
    strong_profile,
)

SEED_BOUND = 2**63


# --- clocks ----------------------------------------------------------------


class Clock(Protocol):
    def now(self) -> float: ...

    def wait_until(self, t: float) -> None: ...


@dataclass
class VirtualClock:
    """Accelerated clock: waiting jumps straight to the target instant."""

    time_s: float = 0.0

    def now(self) -> float:
        return self.time_s

    def wait_until(self, t: float) -> None:
        if t > self.time_s:
            self.time_s = t


class RealClock:
    """Wall clock anchored at construction time."""

    def __init__(self) -> None:
        self._origin = time.monotonic()

    def now(self) -> float:
        return time.monotonic() - self._origin

    def wait_until(self, t: float) -> None:
        delay = t - self.now()
        if delay > 0:
            time.sleep(delay)


# --- events ----------------------------------------------------------------


class EventKind(str, Enum):
    PHASE_CHANGE = "PhaseChange"
    POSTERIOR = "Posterior"
    EVIDENCE = "Evidence"
    TONE = "Tone"
    DECISION = "Decision"
    QUESTION_SHOWN = "QuestionShown"
    TREE_MOVE = "TreeMove"
    RATING_RECORDED = "RatingRecorded"
    RUN_SUMMARY = "RunSummary"
    ERROR = "Error"


@dataclass(frozen=True)
class SessionEvent:
    seq: int
    timestamp_s: float
    kind: EventKind
    payload: dict

    def as_record(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "seq": self.seq,
            "timestamp_s": self.timestamp_s,
            "kind": self.kind.value,
            "payload": self.payload,
        }


def event_from_record(record: dict) -> SessionEvent:
    try:
        version = int(record.get("schema_version", SCHEMA_VERSION))
    except (TypeError, ValueError) as exc:
        raise FormatError(f"bad event record: {exc}") from exc
    if version != SCHEMA_VERSION:
        raise VersionMismatch(
            f"event record schema_version {version}, expected {SCHEMA_VERSION}"
        )
    try:
        return SessionEvent(
            seq=int(record["seq"]),
            timestamp_s=float(record["timestamp_s"]),
            kind=EventKind(record["kind"]),
            payload=dict(record["payload"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad event record: {exc}") from exc


class EventLog:
    """Sequenced event sink with optional JSON-lines mirroring.

    ``emit`` assigns sequence numbers under a lock and notifies listeners in
    emission order, so the in-memory list, the file, and every subscriber
    see the identical sequence.
    """

    def __init__(self, path: Optional[Union[str, Path]] = None) -> None:
        self._lock = threading.Lock()
        self._listeners: list[Callable[[SessionEvent], None]] = []
        self.events: list[SessionEvent] = []
        self.path = Path(path) if path is not None else None
        self._fh = open(self.path, "a", encoding="utf-8") if self.path else None

    def add_listener(self, callback: Callable[[SessionEvent], None]) -> None:
        with self._lock:
            self._listeners.append(callback)

    def attach(
        self, callback: Callable[[SessionEvent], None], from_seq: int = 0
    ) -> None:
        """Register a listener, first replaying history from ``from_seq``.

        Replay and registration happen under the emission lock, so the
        listener sees every event exactly once, in seq order, with no gap
        between history and live delivery.
        """
        with self._lock:
            for event in self.events[from_seq:]:
                callback(event)
            self._listeners.append(callback)

    def detach(self, callback: Callable[[SessionEvent], None]) -> None:
        with self._lock:
            try:
                self._listeners.remove(callback)
            except ValueError:
                pass

    def emit(self, kind: EventKind, timestamp_s: float, payload: dict) -> SessionEvent:
        with self._lock:
            event = SessionEvent(len(self.events), float(timestamp_s), kind, payload)
            self.events.append(event)
            if self._fh is not None:
                self._fh.write(json.dumps(event.as_record(), sort_keys=True) + "\n")
                self._fh.flush()
            for callback in self._listeners:
                callback(event)
        return event

    def of_kind(self, kind: EventKind) -> list[SessionEvent]:
        return [e for e in self.events if e.kind is kind]

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


# --- operator inbox --------------------------------------------------------


class OperatorQueue:
    """Thread-safe operator inbox; aborts overtake queued ratings."""

    def __init__(self) -> None:
        self._cond = threading.Condition()
        self._ratings: deque[ConfidenceRating] = deque()
        self._abort_reason: Optional[str] = None

    def submit_rating(self, rating: ConfidenceRating) -> None:
        with self._cond:
            self._ratings.append(rating)
            self._cond.notify_all()

    def submit_abort(self, reason: str = "operator abort") -> None:
        with self._cond:
            self._abort_reason = reason
            self._cond.notify_all()

    def check_abort(self) -> None:
        with self._cond:
            if self._abort_reason is not None:
                raise AbortRequested(self._abort_reason)

    def next_rating(self, timeout_s: Optional[float] = None) -> ConfidenceRating:
        with self._cond:
            ready = self._cond.wait_for(
                lambda: self._abort_reason is not None or bool(self._ratings),
                timeout=timeout_s,
            )
            if self._abort_reason is not None:
                raise AbortRequested(self._abort_reason)
            if not ready:
                raise AbortRequested(
                    f"no confidence rating arrived within {timeout_s}s"
                )
            return self._ratings.popleft()


# --- subject sources -------------------------------------------------------


@dataclass(frozen=True)
class TrialRequest:
    """What the subject is told before a trial starts.

    ``task_onset_s``/``task_offset_s`` bound the period (relative to the
    trial segment) during which the subject performs or withholds the sound
    imagery task. ``known_intent`` is None for assistive trials, where only
    the subject knows the answer.
    """

    trial_index: int
    run_type: RunType
    duration_s: float
    task_onset_s: float
    task_offset_s: float
    known_intent: Optional[TrialClass]


class SubjectSource(Protocol):
    def begin_trial(self, request: TrialRequest) -> None: ...

    def read(self, n_samples: int) -> np.ndarray: ...


@dataclass
class SyntheticSubjectSource:
    """EEG from a synthetic subject profile, rendered one trial at a time.

    Per-trial waveform seeds are drawn from a generator seeded with the
    profile seed, so a full session is reproducible while trials differ.
    For assistive trials the scripted ``assistive_answers`` supply the
    intent; past the end of the script the subject stops modulating.
    """

    profile: SubjectProfile
    assistive_answers: tuple[Outcome, ...] = ()
    sample_rate_hz: float = 512.0

    def __post_init__(self) -> None:
        self.assistive_answers = tuple(self.assistive_answers)
        self._seed_rng = np.random.default_rng(self.profile.seed)
        self._answer_cursor = 0
        self._segment: Optional[np.ndarray] = None
        self._cursor = 0

    def _intent_for(self, request: TrialRequest) -> TrialClass:
        if request.known_intent is not None:
            return request.known_intent
        if self._answer_cursor < len(self.assistive_answers):
            answer = self.assistive_answers[self._answer_cursor]
            self._answer_cursor += 1
            return class_for_answer(answer)
        self._answer_cursor += 1
        return TrialClass.BASELINE

    def begin_trial(self, request: TrialRequest) -> None:
        intent = self._intent_for(request)
        schedule = IntentSchedule(
            (IntentInterval(request.task_onset_s, request.task_offset_s, intent),)
        )
        seed = int(self._seed_rng.integers(0, SEED_BOUND))
        recording = generate(
            replace(self.profile, seed=seed),
            schedule,
            request.duration_s,
            sample_rate_hz=self.sample_rate_hz,
        )
        self._segment = recording.samples
        self._cursor = 0

    def read(self, n_samples: int) -> np.ndarray:
        if self._segment is None:
            raise StreamEnded("no trial segment prepared; begin_trial first")
        end = self._cursor + n_samples
        if end > self._segment.shape[1]:
            raise StreamEnded(
                f"trial segment has {self._segment.shape[1] - self._cursor}"
                f" samples left, needed {n_samples}"
            )
        block = self._segment[:, self._cursor : end]
        self._cursor = end
        return block


@dataclass
class ReplaySubjectSource:
    """Serves samples of a previously saved recording, in order."""

    recording: Recording
    cursor: int = 0

    def begin_trial(self, request: TrialRequest) -> None:
        return None

    def read(self, n_samples: int) -> np.ndarray:
        end = self.cursor + n_samples
        if end > self.recording.n_samples:
            raise StreamEnded(
                f"recording has {self.recording.n_samples - self.cursor}"
                f" samples left, needed {n_samples}"
            )
        block = self.recording.samples[:, self.cursor : end]
        self.cursor = end
        return block


class StubSubjectSource:
    """Placeholder for a live amplifier adapter; always errors on read."""

    def begin_trial(self, request: TrialRequest) -> None:
        return None

    def read(self, n_samples: int) -> np.ndarray:
        raise HardwareUnavailable(
            "no live amplifier driver is configured; use a replay or"
            " synthetic subject source"
        )


def subject_source_from_spec(spec: str) -> SubjectSource:
    """Build one of the three subject sources from a CLI-style spec string.

    Accepted forms: ``replay:<recording path>``, ``synthetic:strong``,
    ``synthetic:null``, ``synthetic:<profile json path>``, ``stub``.
    """
    from .dataset import read_recording

    kind, _, arg = spec.partition(":")
    if kind == "replay":
        if not arg:
            raise FormatError("replay source needs a recording path")
        return ReplaySubjectSource(read_recording(arg))
    if kind == "synthetic":
        if arg == "strong":
            profile = strong_profile()
        elif arg == "null":
            profile = null_profile()
        elif arg:
            profile = read_profile(arg)
        else:
            raise FormatError("synthetic source needs strong, null, or a path")
        return SyntheticSubjectSource(profile)
    if kind == "stub":
        return StubSubjectSource()
    raise FormatError(f"unknown subject source spec {spec!r}")


def class_for_answer(answer: Outcome) -> TrialClass:
    if answer is Outcome.YES:
        return TrialClass.MODULATED
    if answer is Outcome.NO:
        return TrialClass.BASELINE
    raise InvalidSchedule(f"no trial class corresponds to answer {answer}")


def answer_for_class(trial_class: TrialClass) -> Outcome:
    if trial_class is TrialClass.MODULATED:
        return Outcome.YES
    if trial_class is TrialClass.BASELINE:
        return Outcome.NO
    raise InvalidSchedule(f"no answer corresponds to class {trial_class}")


# --- plans -----------------------------------------------------------------


@dataclass(frozen=True)
class RunPlan:
    """One run of a session: trial classes, questions, or an assistive tree."""

    run_id: str
    run_type: RunType
    classes: tuple[TrialClass, ...] = ()
    questions: tuple[QuestionItem, ...] = ()
    tree: Optional[AssistiveTree] = None
    timing: ProtocolTiming = ProtocolTiming()
    decision: DecisionConfig = DecisionConfig()

    def __post_init__(self) -> None:
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "questions", tuple(self.questions))
        if self.run_type is RunType.OFFLINE:
            if not 4 <= len(self.classes) <= 20:
                raise InvalidSchedule(
                    f"offline run {self.run_id}: expected 4..20 trial classes,"
                    f" got {len(self.classes)}"
                )
            if self.questions or self.tree is not None:
                raise InvalidSchedule(
                    f"offline run {self.run_id}: questions and trees do not apply"
                )
        elif self.run_type is RunType.STANDARD_ONLINE:
            if not 6 <= len(self.questions) <= 10:
                raise InvalidSchedule(
                    f"standard run {self.run_id}: expected 6..10 questions,"
                    f" got {len(self.questions)}"
                )
            if any(q.expected_answer is None for q in self.questions):
                raise InvalidSchedule(
                    f"standard run {self.run_id}: every question needs an"
                    " expected answer"
                )
            if self.classes or self.tree is not None:
                raise InvalidSchedule(
                    f"standard run {self.run_id}: classes and trees do not apply"
                )
        else:
            if self.tree is None:
                raise InvalidSchedule(
                    f"assistive run {self.run_id}: a question tree is required"
                )
            if not 4 <= self.tree.depth <= 5:
                raise InvalidSchedule(
                    f"assistive run {self.run_id}: tree depth"
                    f" {self.tree.depth} outside 4..5"
                )
            if self.classes or self.questions:
                raise InvalidSchedule(
                    f"assistive run {self.run_id}: classes and question lists"
                    " do not apply"
                )

    @property
    def n_trials(self) -> int:
        if self.run_type is RunType.OFFLINE:
            return len(self.classes)
        if self.run_type is RunType.STANDARD_ONLINE:
            return len(self.questions)
        return self.tree.depth if self.tree is not None else 0


@dataclass(frozen=True)
class SessionPlan:
    session_id: str
    runs: tuple[RunPlan, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "runs", tuple(self.runs))
        if not self.runs:
            raise InvalidSchedule("a session plan needs at least one run")
        ids = [r.run_id for r in self.runs]
        if len(set(ids)) != len(ids):
            raise InvalidSchedule(f"duplicate run ids in session: {ids}")

    @property
    def needs_decoder(self) -> bool:
        return any(r.run_type is not RunType.OFFLINE for r in self.runs)


def offline_run_plan(
    run_id: str,
    n_trials: int = 16,
    modulated_fraction: float = 0.5,
    seed: int = 0,
    timing: ProtocolTiming = ProtocolTiming(),
) -> RunPlan:
    return RunPlan(
        run_id=run_id,
        run_type=RunType.OFFLINE,
        classes=class_sequence(n_trials, modulated_fraction, seed),
        timing=timing,
    )


def standard_run_plan(
    run_id: str,
    n_trials: int = 10,
    modulated_fraction: float = 0.5,
    seed: int = 0,
    timing: ProtocolTiming = ProtocolTiming(),
    decision: DecisionConfig = DecisionConfig(),
) -> RunPlan:
    return RunPlan(
        run_id=run_id,
        run_type=RunType.STANDARD_ONLINE,
        questions=plan_standard_run(n_trials, modulated_fraction, seed),
        timing=timing,
        decision=decision,
    )


def assistive_run_plan(
    run_id: str,
    tree: AssistiveTree,
    timing: ProtocolTiming = ProtocolTiming(),
    decision: DecisionConfig = DecisionConfig(),
) -> RunPlan:
    return RunPlan(
        run_id=run_id,
        run_type=RunType.ASSISTIVE_ONLINE,
        tree=tree,
        timing=timing,
        decision=decision,
    )


def _question_to_doc(question: QuestionItem) -> dict:
    return {
        "question_id": question.question_id,
        "text": question.text,
        "expected_answer": (
            question.expected_answer.value if question.expected_answer else None
        ),
        "audio_duration_s": question.audio_duration_s,
    }


def _question_from_doc(doc: dict) -> QuestionItem:
    answer = doc.get("expected_answer")
    return QuestionItem(
        question_id=doc["question_id"],
        text=doc["text"],
        expected_answer=Outcome(answer) if answer is not None else None,
        audio_duration_s=float(doc.get("audio_duration_s", 2.0)),
    )


def tree_to_doc(tree: AssistiveTree) -> dict:
    return {
        "root_id": tree.root_id,
        "nodes": [
            {
                "node_id": node.node_id,
                "question": node.question,
                "yes_child": node.yes_child,
                "no_child": node.no_child,
            }
            for _, node in sorted(tree.nodes.items())
        ],
    }


def tree_from_doc(doc: dict) -> AssistiveTree:
    try:
        nodes = {
            n["node_id"]: AssistiveNode(
                node_id=n["node_id"],
                question=n["question"],
                yes_child=n.get("yes_child"),
                no_child=n.get("no_child"),
            )
            for n in doc["nodes"]
        }
        return AssistiveTree(root_id=doc["root_id"], nodes=nodes)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"bad assistive tree document: {exc}") from exc


def _timing_to_doc(timing: ProtocolTiming) -> dict:
    return {
        "inter_trial_s": timing.inter_trial_s,
        "rest_s": timing.rest_s,
        "rest_cue_s": timing.rest_cue_s,
        "announce_s": timing.announce_s,
        "pre_cue_gap_s": timing.pre_cue_gap_s,
        "cue_s": timing.cue_s,
        "offline_feedback_s": timing.offline_feedback_s,
        "post_question_gap_s": timing.post_question_gap_s,
        "bell_s": timing.bell_s,
        "pre_feedback_gap_s": timing.pre_feedback_gap_s,
        "decoding_timeout_s": timing.decoding_timeout_s,
    }


def _decision_to_doc(decision: DecisionConfig) -> dict:
    return {
        "yes_threshold": decision.yes_threshold,
        "no_threshold": decision.no_threshold,
        "timeout_s": decision.timeout_s,
        "output_period_s": decision.output_period_s,
    }


def plan_to_doc(plan: SessionPlan) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "session_id": plan.session_id,
        "runs": [
            {
                "run_id": r.run_id,
                "run_type": r.run_type.value,
                "classes": [c.value for c in r.classes],
                "questions": [_question_to_doc(q) for q in r.questions],
                "tree": tree_to_doc(r.tree) if r.tree is not None else None,
                "timing": _timing_to_doc(r.timing),
                "decision": _decision_to_doc(r.decision),
            }
            for r in plan.runs
        ],
    }


def plan_from_doc(doc: dict) -> SessionPlan:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(
            f"unsupported plan schema_version {doc.get('schema_version')!r}"
        )
    try:
        runs = tuple(
            RunPlan(
                run_id=r["run_id"],
                run_type=RunType(r["run_type"]),
                classes=tuple(TrialClass(c) for c in r.get("classes", [])),
                questions=tuple(
                    _question_from_doc(q) for q in r.get("questions", [])
                ),
                tree=(
                    tree_from_doc(r["tree"]) if r.get("tree") is not None else None
                ),
                timing=ProtocolTiming(**r["timing"]),
                decision=DecisionConfig(**r["decision"]),
            )
            for r in doc["runs"]
        )
        return SessionPlan(session_id=doc["session_id"], runs=runs)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad session plan document: {exc}") from exc


def write_plan(plan: SessionPlan, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(plan_to_doc(plan), sort_keys=True, indent=2) + "\n")


def read_plan(path: Union[str, Path]) -> SessionPlan:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise FormatError(f"unparseable session plan {path}: {exc}") from exc
    return plan_from_doc(doc)


# --- session engine --------------------------------------------------------


@dataclass(frozen=True)
class SessionConfig:
    baseline_mode: BaselineMode = BaselineMode.PRE_FEEDBACK
    baseline_duration_s: float = 1.0
    rest_duration_s: float = 8.0
    rating_timeout_s: Optional[float] = None
    start_time: str = DEFAULT_START_TIME


@dataclass
class TrialRecord:
    trial_index: int
    true_class: TrialClass
    question: Optional[QuestionItem] = None
    decision: Optional[Decision] = None
    trace: Optional[TrialTrace] = None
    rating: Optional[ConfidenceRating] = None
    node_id: Optional[str] = None


@dataclass
class RunResult:
    plan: RunPlan
    recording: Recording
    manifest: Optional[RunManifest]
    trials: tuple[TrialRecord, ...]
    recording_path: Optional[Path] = None
    manifest_path: Optional[Path] = None

    @property
    def traces(self) -> tuple[TrialTrace, ...]:
        return tuple(t.trace for t in self.trials if t.trace is not None)


@dataclass
class SessionResult:
    plan: SessionPlan
    runs: tuple[RunResult, ...]
    log: EventLog


class _RunContext:
    """Per-run sample accounting: every block read is recorded, and for
    online runs also pushed through the continuous band pipelines."""

    def __init__(
        self,
        subject: SubjectSource,
        run_origin_s: float,
        fs: float,
        pipelines: Optional[tuple[BandPipeline, BandPipeline]],
    ) -> None:
        self.subject = subject
        self.run_origin_s = run_origin_s
        self.fs = fs
        self.pipelines = pipelines
        self.blocks: list[np.ndarray] = []
        self.sample_cursor = 0

    def read(self, n_samples: int, feed: bool = True) -> np.ndarray:
        block = self.subject.read(n_samples)
        if block.shape != (N_CHANNELS, n_samples):
            raise ChannelCountMismatch(
                f"subject produced block of shape {block.shape}, expected"
                f" ({N_CHANNELS}, {n_samples})"
            )
        self.blocks.append(block)
        self.sample_cursor += n_samples
        if feed and self.pipelines is not None:
            alpha, beta = self.pipelines
            alpha.push(block)
            beta.push(block)
        return block

    @property
    def trial_origin_s(self) -> float:
        return self.sample_cursor / self.fs

    def baseline(self, base_n: int) -> BandBaseline:
        alpha, beta = self.pipelines
        return BandBaseline(
            alpha=alpha.window_power(base_n), beta=beta.window_power(base_n)
        )


class _DecodeStream:
    """Adapter handing recorded-but-unfiltered blocks to the trial decoder,
    which drives the pipelines itself."""

    def __init__(self, ctx: _RunContext) -> None:
        self._ctx = ctx

    def read(self, n_samples: int) -> np.ndarray:
        return self._ctx.read(n_samples, feed=False)


class SessionEngine:
    """Executes a session plan against a subject source.

    The engine is a single logical thread of control; operator input
    arrives through an :class:`OperatorQueue` and is honored at phase
    boundaries and decoding outputs (abort) or at rating windows.
    """

    def __init__(
        self,
        plan: SessionPlan,
        subject: SubjectSource,
        *,
        decoder: Optional[TrainedDecoder] = None,
        clock: Optional[Clock] = None,
        log: Optional[EventLog] = None,
        operator: Optional[OperatorQueue] = None,
        config: SessionConfig = SessionConfig(),
        data_dir: Optional[Union[str, Path]] = None,
    ) -> None:
        if plan.needs_decoder and decoder is None:
            raise InvalidSchedule("online runs in the plan require a decoder")
        self.plan = plan
        self.subject = subject
        self.decoder = decoder
        self.clock: Clock = clock if clock is not None else VirtualClock()
        self.data_dir = Path(data_dir) if data_dir is not None else None
        if self.data_dir is not None:
            self.data_dir.mkdir(parents=True, exist_ok=True)
        if log is None:
            log_path = (
                self.data_dir / f"{plan.session_id}.log.jsonl"
                if self.data_dir is not None
                else None
            )
            log = EventLog(log_path)
        self.log = log
        self.operator = operator
        self.config = config
        self.rating_pending_trial: Optional[int] = None
        self.active_run_id: Optional[str] = None

    # -- event helpers --

    def _emit(self, kind: EventKind, payload: dict) -> SessionEvent:
        return self.log.emit(kind, self.clock.now(), payload)

    def _check_abort(self) -> None:
        if self.operator is not None:
            self.operator.check_abort()

    # -- session --

    def run(self) -> SessionResult:
        results = []
        for run_plan in self.plan.runs:
            results.append(self._run(run_plan))
        return SessionResult(plan=self.plan, runs=tuple(results), log=self.log)

    # -- runs --

    def _run(self, plan: RunPlan) -> RunResult:
        fs = (
            self.decoder.alpha_filter.sample_rate_hz
            if self.decoder is not None
            else 512.0
        )
        pipelines = (
            band_pipelines_for(self.decoder)
            if plan.run_type is not RunType.OFFLINE
            else None
        )
        ctx = _RunContext(self.subject, self.clock.now(), fs, pipelines)
        self.active_run_id = plan.run_id
        records: list[TrialRecord] = []
        events: list[TrialEvent] = []
        path: list[str] = []
        try:
            if plan.run_type is RunType.OFFLINE:
                for i, trial_class in enumerate(plan.classes):
                    record, event = self._offline_trial(ctx, plan, i, trial_class)
                    records.append(record)
                    events.append(event)
            elif plan.run_type is RunType.STANDARD_ONLINE:
                for i, question in enumerate(plan.questions):
                    true_class = class_for_answer(question.expected_answer)
                    record, event = self._online_trial(
                        ctx, plan, i, question, true_class
                    )
                    records.append(record)
                    events.append(event)
            else:
                path = self._assistive_run(ctx, plan, records, events)
        except AbortRequested as exc:
            self._emit(
                EventKind.RUN_SUMMARY,
                self._summary_payload(plan, records, aborted=True, reason=str(exc)),
            )
            self.active_run_id = None
            raise
        payload = self._summary_payload(plan, records, aborted=False)
        if path:
            payload["path"] = path
        self._emit(EventKind.RUN_SUMMARY, payload)
        self.active_run_id = None
        return self._finish_run(plan, ctx, records, events)

    def _summary_payload(
        self,
        plan: RunPlan,
        records: Sequence[TrialRecord],
        aborted: bool,
        reason: Optional[str] = None,
    ) -> dict:
        counts: dict[str, int] = {}
        for record in records:
            if record.decision is not None:
                key = record.decision.outcome.value
                counts[key] = counts.get(key, 0) + 1
        payload = {
            "run_id": plan.run_id,
            "run_type": plan.run_type.value,
            "completed_trials": len(records),
            "aborted": aborted,
            "outcome_counts": counts,
        }
        if reason is not None:
            payload["reason"] = reason
        return payload

    def _finish_run(
        self,
        plan: RunPlan,
        ctx: _RunContext,
        records: list[TrialRecord],
        events: list[TrialEvent],
    ) -> RunResult:
        samples = (
            np.concatenate(ctx.blocks, axis=1)
            if ctx.blocks
            else np.empty((N_CHANNELS, 0), dtype=np.float32)
        )
        recording = Recording(
            channel_names=CHANNELS_32,
            samples=samples,
            start_time=self.config.start_time,
            sample_rate_hz=ctx.fs,
        )
        recording_path = manifest_path = None
        manifest: Optional[RunManifest] = None
        if self.data_dir is not None:
            recording_path = self.data_dir / f"{plan.run_id}.vbci"
            write_recording(recording, recording_path)
        if 4 <= len(events) <= 20:
            manifest = RunManifest(
                run_id=plan.run_id,
                recording_path=(
                    str(recording_path)
                    if recording_path is not None
                    else f"{plan.run_id}.vbci"
                ),
                trials=tuple(events),
            )
            if self.data_dir is not None:
                manifest_path = self.data_dir / f"{plan.run_id}.manifest.json"
                write_manifest(manifest, manifest_path)
        return RunResult(
            plan=plan,
            recording=recording,
            manifest=manifest,
            trials=tuple(records),
            recording_path=recording_path,
            manifest_path=manifest_path,
        )

    # -- phases --

    def _play_interval(
        self,
        ctx: _RunContext,
        plan: RunPlan,
        trial_index: int,
        trial_origin_s: float,
        interval: PhaseInterval,
        on_phase_start: Optional[Callable[[], None]] = None,
    ) -> None:
        self._check_abort()
        start = ctx.run_origin_s + trial_origin_s + interval.onset_s
        self.clock.wait_until(start)
        self._emit(
            EventKind.PHASE_CHANGE,
            {
                "run_id": plan.run_id,
                "trial_index": trial_index,
                "phase": interval.phase.value,
                "audio_text": interval.audio_text,
                "tone_hz": interval.tone_hz,
                "onset_in_run_s": trial_origin_s + interval.onset_s,
            },
        )
        if on_phase_start is not None:
            on_phase_start()
        n = int(round(interval.duration_s * ctx.fs))
        if interval.phase is TrialPhase.FEEDBACK and interval.tone_hz is not None:
            self._play_feedback_tone(ctx, plan, trial_index, start, interval, n)
        else:
            if n:
                ctx.read(n)
        self.clock.wait_until(start + interval.duration_s)

    def _play_feedback_tone(
        self,
        ctx: _RunContext,
        plan: RunPlan,
        trial_index: int,
        start: float,
        interval: PhaseInterval,
        n: int,
    ) -> None:
        """Offline feedback: the class tone ramps up linearly; one tone
        event and one second of samples per elapsed second."""
        per_second = int(round(ctx.fs))
        whole, remainder = divmod(n, per_second)
        for second in range(whole):
            self.clock.wait_until(start + second)
            self._emit(
                EventKind.TONE,
                {
                    "run_id": plan.run_id,
                    "trial_index": trial_index,
                    "frequency_hz": interval.tone_hz,
                    "volume": ramp_volume(second, interval.duration_s),
                },
            )
            ctx.read(per_second)
        if remainder:
            ctx.read(remainder)

    # -- trials --

    def _offline_trial(
        self,
        ctx: _RunContext,
        plan: RunPlan,
        trial_index: int,
        trial_class: TrialClass,
    ) -> tuple[TrialRecord, TrialEvent]:
        timeline = build_offline_timeline(trial_index, trial_class, plan.timing)
        trial_origin = ctx.trial_origin_s
        feedback = timeline[-1]
        self.subject.begin_trial(
            TrialRequest(
                trial_index=trial_index,
                run_type=plan.run_type,
                duration_s=feedback.end_s,
                task_onset_s=feedback.onset_s,
                task_offset_s=feedback.end_s,
                known_intent=trial_class,
            )
        )
        for interval in timeline:
            self._play_interval(ctx, plan, trial_index, trial_origin, interval)
        event = TrialEvent(
            trial_index=trial_index,
            run_type=plan.run_type,
            true_class=trial_class,
            rest_onset_s=trial_origin + phase_onset(timeline, TrialPhase.REST),
            cue_onset_s=trial_origin + phase_onset(timeline, TrialPhase.CUE),
            feedback_onset_s=trial_origin + feedback.onset_s,
            trial_end_s=trial_origin + feedback.end_s,
        )
        return TrialRecord(trial_index=trial_index, true_class=trial_class), event

    def _online_trial(
        self,
        ctx: _RunContext,
        plan: RunPlan,
        trial_index: int,
        question: QuestionItem,
        true_class: TrialClass,
        node_id: Optional[str] = None,
    ) -> tuple[TrialRecord, TrialEvent]:
        timeline = build_online_timeline(question, trial_index, plan.timing)
        trial_origin = ctx.trial_origin_s
        decoding = timeline[-1]
        self.subject.begin_trial(
            TrialRequest(
                trial_index=trial_index,
                run_type=plan.run_type,
                duration_s=decoding.end_s,
                task_onset_s=decoding.onset_s,
                task_offset_s=decoding.end_s,
                known_intent=(
                    true_class if true_class is not TrialClass.UNKNOWN else None
                ),
            )
        )
        base_n = int(round(self.config.baseline_duration_s * ctx.fs))
        baseline: Optional[BandBaseline] = None
        def show_question() -> None:
            self._emit(
                EventKind.QUESTION_SHOWN,
                {
                    "run_id": plan.run_id,
                    "trial_index": trial_index,
                    "question_id": question.question_id,
                    "text": question.text,
                },
            )

        for interval in timeline[:-1]:
            on_start = show_question if interval.phase is TrialPhase.CUE else None
            self._play_interval(
                ctx, plan, trial_index, trial_origin, interval, on_start
            )
            if (
                interval.phase is TrialPhase.REST
                and self.config.baseline_mode is BaselineMode.REST_END
            ):
                baseline = ctx.baseline(base_n)
        if baseline is None:
            baseline = ctx.baseline(base_n)

        decode_origin = trial_origin + decoding.onset_s
        decode_start = ctx.run_origin_s + decode_origin
        self._check_abort()
        self.clock.wait_until(decode_start)
        self._emit(
            EventKind.PHASE_CHANGE,
            {
                "run_id": plan.run_id,
                "trial_index": trial_index,
                "phase": decoding.phase.value,
                "audio_text": decoding.audio_text,
                "tone_hz": decoding.tone_hz,
                "onset_in_run_s": decode_origin,
            },
        )

        def on_output(t, posterior, state, tone) -> None:
            self._check_abort()
            self._emit(
                EventKind.POSTERIOR,
                {
                    "run_id": plan.run_id,
                    "trial_index": trial_index,
                    "time_in_trial_s": t,
                    "value": posterior,
                },
            )
            self._emit(
                EventKind.EVIDENCE,
                {
                    "run_id": plan.run_id,
                    "trial_index": trial_index,
                    "time_in_trial_s": t,
                    "prob_modulated": state.prob_modulated,
                },
            )
            self._emit(
                EventKind.TONE,
                {
                    "run_id": plan.run_id,
                    "trial_index": trial_index,
                    "frequency_hz": tone.frequency_hz,
                    "volume": tone.volume,
                },
            )

        alpha, beta = ctx.pipelines
        decision, trace_points = decode_trial_with_pipelines(
            self.decoder,
            _DecodeStream(ctx),
            alpha,
            beta,
            plan.decision,
            baseline=baseline,
            on_output=on_output,
            pace=lambda t: self.clock.wait_until(decode_start + t),
        )
        self._emit(
            EventKind.DECISION,
            {
                "run_id": plan.run_id,
                "trial_index": trial_index,
                "outcome": decision.outcome.value,
                "decision_time_s": decision.decision_time_s,
                "true_class": true_class.value,
            },
        )
        self._emit(
            EventKind.PHASE_CHANGE,
            {
                "run_id": plan.run_id,
                "trial_index": trial_index,
                "phase": TrialPhase.ENDED.value,
                "audio_text": _result_message(decision.outcome),
                "tone_hz": None,
                "onset_in_run_s": decode_origin + decision.decision_time_s,
            },
        )
        trace = TrialTrace(
            trial_index=trial_index,
            true_class=true_class,
            points=tuple(trace_points),
            decision=decision,
        )
        event = TrialEvent(
            trial_index=trial_index,
            run_type=plan.run_type,
            true_class=true_class,
            rest_onset_s=trial_origin + phase_onset(timeline, TrialPhase.REST),
            cue_onset_s=trial_origin + phase_onset(timeline, TrialPhase.CUE),
            feedback_onset_s=decode_origin,
            trial_end_s=decode_origin + decision.decision_time_s,
            question_text=question.text,
        )
        record = TrialRecord(
            trial_index=trial_index,
            true_class=true_class,
            question=question,
            decision=decision,
            trace=trace,
            node_id=node_id,
        )
        return record, event

    # -- assistive --

    def _assistive_run(
        self,
        ctx: _RunContext,
        plan: RunPlan,
        records: list[TrialRecord],
        events: list[TrialEvent],
    ) -> list[str]:
        tree = plan.tree
        node: Optional[AssistiveNode] = tree.node(tree.root_id)
        path = [tree.root_id]
        trial_index = 0
        while node is not None:
            question = QuestionItem(
                question_id=node.node_id, text=node.question, expected_answer=None
            )
            record, event = self._online_trial(
                ctx, plan, trial_index, question, TrialClass.UNKNOWN, node.node_id
            )
            records.append(record)
            events.append(event)
            decision = record.decision
            if decision.outcome is Outcome.TIMEOUT:
                self._emit(
                    EventKind.TREE_MOVE,
                    {
                        "run_id": plan.run_id,
                        "trial_index": trial_index,
                        "from_node": node.node_id,
                        "answer": decision.outcome.value,
                        "to_node": None,
                        "to_question": None,
                    },
                )
                break
            record.rating = self._await_rating(plan, trial_index)
            child_id = (
                node.yes_child if decision.outcome is Outcome.YES else node.no_child
            )
            next_node = tree.node(child_id) if child_id is not None else None
            self._emit(
                EventKind.TREE_MOVE,
                {
                    "run_id": plan.run_id,
                    "trial_index": trial_index,
                    "from_node": node.node_id,
                    "answer": decision.outcome.value,
                    "to_node": child_id,
                    "to_question": next_node.question if next_node else None,
                },
            )
            if child_id is not None:
                path.append(child_id)
            node = next_node
            trial_index += 1
        return path

    def _await_rating(
        self, plan: RunPlan, trial_index: int
    ) -> Optional[ConfidenceRating]:
        if self.operator is None:
            return None
        self.rating_pending_trial = trial_index
        try:
            while True:
                rating = self.operator.next_rating(self.config.rating_timeout_s)
                if rating.trial_index != trial_index:
                    self._emit(
                        EventKind.ERROR,
                        {
                            "run_id": plan.run_id,
                            "message": (
                                f"rating for trial {rating.trial_index} while"
                                f" trial {trial_index} is pending"
                            ),
                        },
                    )
                    continue
                self._emit(
                    EventKind.RATING_RECORDED,
                    {
                        "run_id": plan.run_id,
                        "trial_index": trial_index,
                        "score": rating.score,
                        "classification": score_confidence(rating).value,
                        "rater_note": rating.rater_note,
                    },
                )
                return rating
        finally:
            self.rating_pending_trial = None


def _result_message(outcome: Outcome) -> str:
    if outcome is Outcome.YES:
        return "You selected Yes"
    if outcome is Outcome.NO:
        return "You selected No"
    return "Time out"


def run_session(
    plan: SessionPlan,
    subject: SubjectSource,
    *,
    decoder: Optional[TrainedDecoder] = None,
    clock: Optional[Clock] = None,
    log: Optional[EventLog] = None,
    operator: Optional[OperatorQueue] = None,
    config: SessionConfig = SessionConfig(),
    data_dir: Optional[Union[str, Path]] = None,
) -> SessionResult:
    """Execute a full session plan; see :class:`SessionEngine`.

    Raises AbortRequested on operator abort; everything logged up to that
    point is retained in the event log (and its JSON-lines file).
    """
    engine = SessionEngine(
        plan,
        subject,
        decoder=decoder,
        clock=clock,
        log=log,
        operator=operator,
        config=config,
        data_dir=data_dir,
    )
    return engine.run()


# --- replay ------------------------------------------------------------------


@dataclass(frozen=True)
class ReplayedTrial:
    trial_index: int
    true_class: TrialClass
    decision: Optional[Decision]
    trace: tuple[tuple[float, float], ...]


def replay_run(
    recording: Recording,
    manifest: RunManifest,
    decoder: TrainedDecoder,
    decision_config: DecisionConfig = DecisionConfig(),
    config: SessionConfig = SessionConfig(),
) -> tuple[ReplayedTrial, ...]:
    """Recompute every trial decision of a saved run.

    The band filters run causally over the recording exactly as the live
    engine ran them, so with the decoder that produced the run the decisions
    and evidence traces come out bit-identical. With a different decoder the
    decisions may differ; a trial whose recorded region ends before the new
    decoder reaches a decision yields ``decision=None``.
    """
    if tuple(recording.channel_names) != CHANNELS_32:
        raise ChannelCountMismatch("replay expects the standard 32-channel montage")
    fs = recording.sample_rate_hz
    alpha, beta = band_pipelines_for(decoder)
    base_n = int(round(config.baseline_duration_s * fs))
    cursor = 0
    results: list[ReplayedTrial] = []

    def feed(start: int, stop: int) -> None:
        if stop > start:
            block = recording.samples[:, start:stop]
            alpha.push(block)
            beta.push(block)

    for trial in manifest.trials:
        feedback_n = int(round(trial.feedback_onset_s * fs))
        end_n = int(round(trial.trial_end_s * fs))
        if end_n > recording.n_samples:
            raise StreamEnded(
                f"trial {trial.trial_index} ends at sample {end_n}, recording"
                f" has {recording.n_samples}"
            )
        if config.baseline_mode is BaselineMode.REST_END:
            rest_end_n = int(
                round((trial.rest_onset_s + config.rest_duration_s) * fs)
            )
            feed(cursor, rest_end_n)
            baseline = BandBaseline(
                alpha=alpha.window_power(base_n), beta=beta.window_power(base_n)
            )
            feed(rest_end_n, feedback_n)
        else:
            feed(cursor, feedback_n)
            baseline = BandBaseline(
                alpha=alpha.window_power(base_n), beta=beta.window_power(base_n)
            )
        region = ArrayStream(recording.samples[:, feedback_n:end_n])
        trace: list[tuple[float, float]] = []
        decision: Optional[Decision] = None
        try:
            decision, _ = decode_trial_with_pipelines(
                decoder,
                region,
                alpha,
                beta,
                decision_config,
                baseline=baseline,
                on_output=lambda t, p, state, tone: trace.append(
                    (t, state.prob_modulated)
                ),
            )
        except StreamEnded:
            decision = None
        feed(feedback_n + region.cursor, end_n)
        cursor = end_n
        results.append(
            ReplayedTrial(
                trial_index=trial.trial_index,
                true_class=trial.true_class,
                decision=decision,
                trace=tuple(trace),
            )
        )
    return tuple(results)


# --- event log tooling -----------------------------------------------------


@dataclass(frozen=True)
class RunLogView:
    """One run's decisions, traces, and ratings recovered from an event log.

    ``traces`` holds one entry per decided trial in trial order; assistive
    trials keep their UNKNOWN class until a rating reconstructs the truth.
    """

    run_id: str
    traces: tuple[TrialTrace, ...]
    ratings: dict[int, ConfidenceRating]
    summary: Optional[dict]


def run_views_from_records(records: Sequence[dict]) -> tuple[RunLogView, ...]:
    """Group a session log's records into per-run decisions and traces."""
    order: list[str] = []
    points: dict[tuple[str, int], list[tuple[float, float]]] = defaultdict(list)
    traces: dict[str, dict[int, TrialTrace]] = defaultdict(dict)
    ratings: dict[str, dict[int, ConfidenceRating]] = defaultdict(dict)
    summaries: dict[str, dict] = {}
    for record in records:
        event = event_from_record(record)
        run_id = event.payload.get("run_id")
        if run_id is None:
            continue
        if run_id not in order:
            order.append(run_id)
        trial = event.payload.get("trial_index")
        if event.kind is EventKind.EVIDENCE:
            points[(run_id, trial)].append(
                (
                    float(event.payload["time_in_trial_s"]),
                    float(event.payload["prob_modulated"]),
                )
            )
        elif event.kind is EventKind.DECISION:
            decision = Decision(
                outcome=Outcome(event.payload["outcome"]),
                decision_time_s=float(event.payload["decision_time_s"]),
            )
            traces[run_id][int(trial)] = TrialTrace(
                trial_index=int(trial),
                true_class=TrialClass(event.payload["true_class"]),
                points=tuple(points[(run_id, trial)]),
                decision=decision,
            )
        elif event.kind is EventKind.RATING_RECORDED:
            ratings[run_id][int(trial)] = ConfidenceRating(
                trial_index=int(trial),
                score=int(event.payload["score"]),
                rater_note=str(event.payload.get("rater_note", "")),
            )
        elif event.kind is EventKind.RUN_SUMMARY:
            summaries[run_id] = dict(event.payload)
    return tuple(
        RunLogView(
            run_id=run_id,
            traces=tuple(
                traces[run_id][i] for i in sorted(traces.get(run_id, {}))
            ),
            ratings=dict(ratings.get(run_id, {})),
            summary=summaries.get(run_id),
        )
        for run_id in order
    )
