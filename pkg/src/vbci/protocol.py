"""Timed trial structure, question material, and assistive decision trees.

Timelines are ordered phase intervals with exact onset sums; audio is
represented as text and tone payloads for the session layer to emit, never
rendered here.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .dataset import TrialClass
from .errors import InvalidSchedule, OutOfRange, QuestionTooLong, UnknownNode
from .online import Outcome, TONE_BASELINE_HZ, TONE_MODULATED_HZ

SAMPLE_RATE_HZ = 512.0

MODULATED_CUE_TEXT = "Make it noisy"
BASELINE_CUE_TEXT = "Make it clean"
REST_CUE_TEXT = "Rest"

MIN_QUESTION_S = 1.0
MAX_QUESTION_S = 4.0


class TrialPhase(str, enum.Enum):
    INTER_TRIAL = "InterTrial"
    REST = "Rest"
    ANNOUNCE = "Announce"
    PRE_CUE_GAP = "PreCueGap"
    CUE = "Cue"
    POST_QUESTION_GAP = "PostQuestionGap"
    BELL = "Bell"
    PRE_FEEDBACK_GAP = "PreFeedbackGap"
    FEEDBACK = "Feedback"
    DECODING = "Decoding"
    ENDED = "Ended"


@dataclass(frozen=True)
class ProtocolTiming:
    """Phase durations in seconds; defaults follow the run descriptions."""

    inter_trial_s: float = 3.0
    rest_s: float = 8.0
    rest_cue_s: float = 0.5
    announce_s: float = 1.0
    pre_cue_gap_s: float = 2.0
    cue_s: float = 1.0
    offline_feedback_s: float = 10.0
    post_question_gap_s: float = 3.0
    bell_s: float = 0.5
    pre_feedback_gap_s: float = 4.0
    decoding_timeout_s: float = 20.0


@dataclass(frozen=True)
class PhaseInterval:
    phase: TrialPhase
    onset_s: float
    duration_s: float
    audio_text: str = ""
    tone_hz: Optional[int] = None

    @property
    def end_s(self) -> float:
        return self.onset_s + self.duration_s


@dataclass(frozen=True)
class QuestionItem:
    """One auditory Yes/No question.

    ``expected_answer`` is set for general-knowledge material (it defines
    the trial's true class) and absent for assistive questions, whose ground
    truth only exists as the caretaker's retrospective rating.
    """

    question_id: str
    text: str
    expected_answer: Optional[Outcome] = None
    audio_duration_s: float = 2.0


def snap_to_sample_grid(duration_s: float, fs: float = SAMPLE_RATE_HZ) -> float:
    """Round a duration to a whole number of samples."""
    return round(duration_s * fs) / fs


def _chain(
    parts: Sequence[tuple[TrialPhase, float, str, Optional[int]]],
) -> list[PhaseInterval]:
    onset = 0.0
    out = []
    for phase, duration, text, tone in parts:
        out.append(PhaseInterval(phase, onset, duration, text, tone))
        onset += duration
    return out


def cue_text_for_class(trial_class: TrialClass) -> str:
    return (
        MODULATED_CUE_TEXT
        if trial_class is TrialClass.MODULATED
        else BASELINE_CUE_TEXT
    )


def class_tone_hz(trial_class: TrialClass) -> int:
    return (
        TONE_MODULATED_HZ
        if trial_class is TrialClass.MODULATED
        else TONE_BASELINE_HZ
    )


def ramp_volume(elapsed_s: float, ramp_s: float = 10.0) -> float:
    """Linear volume ramp from silent to full over the feedback period."""
    return min(max(elapsed_s / ramp_s, 0.0), 1.0)


def build_offline_timeline(
    trial_index: int,
    trial_class: TrialClass,
    timing: ProtocolTiming = ProtocolTiming(),
) -> list[PhaseInterval]:
    """Phase schedule for one offline training trial (25 s with defaults).

    The feedback phase plays the class tone with a volume ramp from 0 to 1
    over its full duration.
    """
    return _chain(
        [
            (TrialPhase.INTER_TRIAL, timing.inter_trial_s, "", None),
            (TrialPhase.REST, timing.rest_s, REST_CUE_TEXT, None),
            (
                TrialPhase.ANNOUNCE,
                timing.announce_s,
                f"Trial {trial_index + 1}",
                None,
            ),
            (TrialPhase.PRE_CUE_GAP, timing.pre_cue_gap_s, "", None),
            (
                TrialPhase.CUE,
                timing.cue_s,
                cue_text_for_class(trial_class),
                None,
            ),
            (
                TrialPhase.FEEDBACK,
                timing.offline_feedback_s,
                "",
                class_tone_hz(trial_class),
            ),
        ]
    )


def build_online_timeline(
    question: QuestionItem,
    trial_index: int = 0,
    timing: ProtocolTiming = ProtocolTiming(),
) -> list[PhaseInterval]:
    """Phase schedule for one online trial up to the decoding window.

    The question duration is snapped to the sample grid; the decoding
    interval's duration is the timeout, an upper bound cut short by any
    threshold crossing. With the default timings and a 2 s question,
    decoding starts at 23.5 s.
    """
    duration = snap_to_sample_grid(question.audio_duration_s)
    if not MIN_QUESTION_S <= duration <= MAX_QUESTION_S:
        raise QuestionTooLong(
            f"question audio must last {MIN_QUESTION_S}..{MAX_QUESTION_S} s,"
            f" got {question.audio_duration_s}"
        )
    return _chain(
        [
            (TrialPhase.INTER_TRIAL, timing.inter_trial_s, "", None),
            (TrialPhase.REST, timing.rest_s, REST_CUE_TEXT, None),
            (
                TrialPhase.ANNOUNCE,
                timing.announce_s,
                f"Question {trial_index + 1}",
                None,
            ),
            (TrialPhase.PRE_CUE_GAP, timing.pre_cue_gap_s, "", None),
            (TrialPhase.CUE, duration, question.text, None),
            (
                TrialPhase.POST_QUESTION_GAP,
                timing.post_question_gap_s,
                "",
                None,
            ),
            (TrialPhase.BELL, timing.bell_s, "", None),
            (
                TrialPhase.PRE_FEEDBACK_GAP,
                timing.pre_feedback_gap_s,
                "",
                None,
            ),
            (TrialPhase.DECODING, timing.decoding_timeout_s, "", None),
        ]
    )


def phase_onset(
    timeline: Sequence[PhaseInterval], phase: TrialPhase
) -> float:
    for interval in timeline:
        if interval.phase is phase:
            return interval.onset_s
    raise KeyError(f"timeline has no {phase.value} phase")


# --- assistive decision trees -----------------------------------------------


@dataclass(frozen=True)
class AssistiveNode:
    node_id: str
    question: str
    yes_child: Optional[str] = None
    no_child: Optional[str] = None


@dataclass(frozen=True)
class AssistiveTree:
    """Acyclic Yes/No question tree addressed by node ids."""

    root_id: str
    nodes: Mapping[str, AssistiveNode]

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", dict(self.nodes))
        if self.root_id not in self.nodes:
            raise UnknownNode(f"root {self.root_id!r} not among nodes")
        for node in self.nodes.values():
            for child in (node.yes_child, node.no_child):
                if child is not None and child not in self.nodes:
                    raise UnknownNode(
                        f"node {node.node_id!r} links missing child {child!r}"
                    )
        self._assert_acyclic()

    def _assert_acyclic(self) -> None:
        states: dict[str, int] = {}

        def visit(node_id: str) -> int:
            if states.get(node_id) == 1:
                raise InvalidSchedule("assistive tree contains a cycle")
            if states.get(node_id) == 2:
                return self._depths[node_id]
            states[node_id] = 1
            node = self.nodes[node_id]
            depth = 1
            for child in (node.yes_child, node.no_child):
                if child is not None:
                    depth = max(depth, 1 + visit(child))
            states[node_id] = 2
            self._depths[node_id] = depth
            return depth

        object.__setattr__(self, "_depths", {})
        for node_id in self.nodes:
            visit(node_id)

    @property
    def depth(self) -> int:
        return self._depths[self.root_id]

    def node(self, node_id: str) -> AssistiveNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(f"no node {node_id!r}") from None


def assistive_next(
    tree: AssistiveTree, node_id: str, answer: Outcome
) -> Optional[AssistiveNode]:
    """Child node selected by the answer, or None at a leaf."""
    node = tree.node(node_id)
    if answer is Outcome.YES:
        child = node.yes_child
    elif answer is Outcome.NO:
        child = node.no_child
    else:
        raise OutOfRange(f"tree traversal needs Yes or No, got {answer}")
    return tree.node(child) if child is not None else None


def default_assistive_tree() -> AssistiveTree:
    """Demo comfort-care tree, four questions deep on every path."""
    nodes = [
        AssistiveNode("comfort", "Are you comfortable?", "music", "pain"),
        AssistiveNode(
            "pain", "Do you have pain in your back?", "massage", "position"
        ),
        AssistiveNode(
            "massage", "Would you like a massage?", "lower-back", "rest-now"
        ),
        AssistiveNode(
            "lower-back", "Should the massage focus on your lower back?"
        ),
        AssistiveNode("rest-now", "Would you rather rest for a while?"),
        AssistiveNode(
            "position", "Would you like to change your position?", "sit-up", "blanket"
        ),
        AssistiveNode("sit-up", "Should we raise the backrest?"),
        AssistiveNode("blanket", "Would you like another blanket?"),
        AssistiveNode(
            "music", "Would you like to listen to music?", "classical", "window"
        ),
        AssistiveNode(
            "classical", "Should it be classical music?", "louder", "radio"
        ),
        AssistiveNode("louder", "Should the music be louder than usual?"),
        AssistiveNode("radio", "Would you prefer the radio instead?"),
        AssistiveNode(
            "window", "Should we open the window?", "curtains", "light"
        ),
        AssistiveNode("curtains", "Should the curtains stay open?"),
        AssistiveNode("light", "Should we dim the light?"),
    ]
    return AssistiveTree("comfort", {n.node_id: n for n in nodes})


# --- caretaker confidence ----------------------------------------------------


class RatingOutcome(str, enum.Enum):
    CORRECT = "Correct"
    INCORRECT = "Incorrect"


@dataclass(frozen=True)
class ConfidenceRating:
    trial_index: int
    score: int
    rater_note: str = ""

    def __post_init__(self) -> None:
        if self.score not in (1, 2, 3, 4, 5):
            raise OutOfRange(f"confidence score {self.score} outside 1..5")


def score_confidence(rating: ConfidenceRating) -> RatingOutcome:
    """Scores above 3 count the decoded answer as correct."""
    return (
        RatingOutcome.CORRECT if rating.score > 3 else RatingOutcome.INCORRECT
    )


# --- run material -------------------------------------------------------------


QUESTION_BANK: tuple[QuestionItem, ...] = tuple(
    QuestionItem(f"q{i:02d}", text, expected)
    for i, (text, expected) in enumerate(
        [
            ("Do human hearts beat?", Outcome.YES),
            ("Does a year have 1000 days?", Outcome.NO),
            ("Is the sun a star?", Outcome.YES),
            ("Do fish live in water?", Outcome.YES),
            ("Is ice hot?", Outcome.NO),
            ("Do plants need light to grow?", Outcome.YES),
            ("Can airplanes fly?", Outcome.YES),
            ("Is bread made of stone?", Outcome.NO),
            ("Do cats have wings?", Outcome.NO),
            ("Is water wet?", Outcome.YES),
            ("Does snow fall in winter?", Outcome.YES),
            ("Can cars swim across oceans?", Outcome.NO),
        ]
    )
)

MAX_CONSECUTIVE_SAME_CLASS = 3


def class_sequence(
    n_trials: int,
    modulated_fraction: float = 0.5,
    seed: int = 0,
    max_consecutive: int = MAX_CONSECUTIVE_SAME_CLASS,
) -> tuple[TrialClass, ...]:
    """Seeded pseudo-random class order with enforced counts.

    The number of Modulated trials is round(n * fraction); orders with more
    than ``max_consecutive`` identical classes in a row are rejected and
    redrawn. Raises InvalidSchedule when the counts make that impossible.
    """
    if n_trials < 1:
        raise InvalidSchedule("need at least one trial")
    n_mod = int(round(n_trials * modulated_fraction))
    n_base = n_trials - n_mod
    bigger, smaller = max(n_mod, n_base), min(n_mod, n_base)
    if bigger > max_consecutive * (smaller + 1):
        raise InvalidSchedule(
            f"cannot arrange {n_mod}/{n_base} split without more than"
            f" {max_consecutive} consecutive identical classes"
        )
    rng = np.random.default_rng(seed)
    pool = [TrialClass.MODULATED] * n_mod + [TrialClass.BASELINE] * n_base

    def longest_run(seq: Sequence[TrialClass]) -> int:
        best = run = 1
        for prev, cur in zip(seq, seq[1:]):
            run = run + 1 if cur is prev else 1
            best = max(best, run)
        return best

    while True:
        order = list(rng.permutation(len(pool)))
        seq = tuple(pool[i] for i in order)
        if longest_run(seq) <= max_consecutive:
            return seq


def plan_standard_run(
    n_trials: int,
    modulated_fraction: float = 0.5,
    seed: int = 0,
    bank: Sequence[QuestionItem] = QUESTION_BANK,
) -> tuple[QuestionItem, ...]:
    """Pick general-knowledge questions whose expected answers realize the
    seeded class sequence, without repeating a question inside the run."""
    classes = class_sequence(n_trials, modulated_fraction, seed)
    rng = np.random.default_rng(seed + 1)
    yes_pool = [q for q in bank if q.expected_answer is Outcome.YES]
    no_pool = [q for q in bank if q.expected_answer is Outcome.NO]
    n_yes = sum(1 for c in classes if c is TrialClass.MODULATED)
    n_no = len(classes) - n_yes
    if n_yes > len(yes_pool) or n_no > len(no_pool):
        raise InvalidSchedule(
            "question bank too small for the requested class counts"
        )
    yes_pick = list(rng.choice(len(yes_pool), size=n_yes, replace=False))
    no_pick = list(rng.choice(len(no_pool), size=n_no, replace=False))
    out = []
    for cls in classes:
        if cls is TrialClass.MODULATED:
            out.append(yes_pool[yes_pick.pop()])
        else:
            out.append(no_pool[no_pick.pop()])
    return tuple(out)
