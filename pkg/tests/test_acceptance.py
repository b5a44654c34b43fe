"""Whole-pipeline acceptance checks.

Each test covers one headline guarantee and prints a single PASS/FAIL line
(on the real terminal, bypassing capture), so a full run doubles as an
acceptance report. The synthetic closed-loop benchmark is built once per
test session and shared between the checks that need it.
"""

import json
import time

import numpy as np
import pytest

from vbci.dataset import (
    EpochingConfig,
    TrialClass,
    epoch_trials,
    read_jsonl,
    read_manifest,
    read_recording,
)
from vbci.metrics import (
    bh_correct,
    chance_kappa,
    channel_difference_test,
    class_band_samples,
    cohen_kappa,
    summarize_traces,
)
from vbci.online import DecisionConfig, EvidenceState, Outcome, accumulate, check_decision
from vbci.protocol import ProtocolTiming
from vbci.session import (
    SessionPlan,
    SyntheticSubjectSource,
    VirtualClock,
    offline_run_plan,
    replay_run,
    run_session,
    run_views_from_records,
    standard_run_plan,
)
from vbci.signals import FilterSpec, design_bandpass, filter_block, filter_zero_phase, new_filter_state
from vbci.svm import solve_hinge_dual
from vbci.synth import null_profile, strong_profile
from vbci.training import train_decoder

from .oracles import (
    bh_stepup,
    confusion_kappa,
    magnitude_response,
    svm_objective,
    svm_subgradient_reference,
)
from .probes import undecided_decoder


def report(capsys, name: str, ok: bool, detail: str = "") -> None:
    """One visible line per acceptance criterion, capture or not."""
    status = "PASS" if ok else "FAIL"
    line = f"[{status}] {name}"
    if detail:
        line += f"  ({detail})"
    with capsys.disabled():
        print(line)


def _decision_bytes(pairs) -> bytes:
    """Canonical serialization of a decision sequence for byte comparison."""
    return json.dumps(
        [[outcome, time_s] for outcome, time_s in pairs], sort_keys=True
    ).encode()


@pytest.fixture(scope="session")
def strong_benchmark(tmp_path_factory):
    """3 offline sessions (3 runs x 16 trials), decoder, 2 online runs x 10."""
    started = time.monotonic()
    root = tmp_path_factory.mktemp("bench-strong")
    offline = []
    for s in range(3):
        plan = SessionPlan(
            f"bench-off{s}",
            tuple(
                offline_run_plan(f"off{s}-r{r}", 16, 0.5, seed=16 * s + r)
                for r in range(3)
            ),
        )
        subject = SyntheticSubjectSource(
            strong_profile(beta_gain=2.0, alpha_gain=1.5, seed=100 + s)
        )
        result = run_session(
            plan, subject, clock=VirtualClock(), data_dir=root / f"off{s}"
        )
        offline.extend((run.recording, run.manifest) for run in result.runs)
    decoder = train_decoder(offline)
    online_plan = SessionPlan(
        "bench-on",
        tuple(standard_run_plan(f"on-r{r}", 10, 0.5, seed=50 + r) for r in range(2)),
    )
    online = run_session(
        online_plan,
        SyntheticSubjectSource(strong_profile(seed=777)),
        decoder=decoder,
        clock=VirtualClock(),
        data_dir=root / "online",
    )
    elapsed = time.monotonic() - started
    return {
        "root": root,
        "offline": offline,
        "decoder": decoder,
        "online": online,
        "elapsed_s": elapsed,
    }


@pytest.fixture(scope="session")
def null_benchmark(tmp_path_factory):
    """Same pipeline with a non-responding subject (gain 1.0 everywhere)."""
    root = tmp_path_factory.mktemp("bench-null")
    plan = SessionPlan(
        "null-off",
        tuple(offline_run_plan(f"noff-r{r}", 16, 0.5, seed=60 + r) for r in range(3)),
    )
    result = run_session(
        plan,
        SyntheticSubjectSource(null_profile(seed=200)),
        clock=VirtualClock(),
        data_dir=root / "off",
    )
    offline = [(run.recording, run.manifest) for run in result.runs]
    decoder = train_decoder(offline)
    online_plan = SessionPlan(
        "null-on",
        tuple(standard_run_plan(f"non-r{r}", 10, 0.5, seed=90 + r) for r in range(3)),
    )
    online = run_session(
        online_plan,
        SyntheticSubjectSource(null_profile(seed=888)),
        decoder=decoder,
        clock=VirtualClock(),
        data_dir=root / "on",
    )
    return {"offline": offline, "online": online}


def test_closed_loop_benchmark_strong_subject(strong_benchmark, capsys):
    traces = [
        trace for run in strong_benchmark["online"].runs for trace in run.traces
    ]
    assert len(traces) == 20
    summary = summarize_traces(traces)
    checks = {
        "kappa>=0.8": summary.kappa.kappa >= 0.8,
        "bar_dynamics>=80%": summary.bar_dynamics_mean >= 80.0,
        "hits@0.6>=90%": summary.hits_percent >= 90.0,
        "latency<=6s": (
            summary.mean_latency_s is not None
            and summary.mean_latency_s <= 6.0
        ),
        "runtime<=120s": strong_benchmark["elapsed_s"] <= 120.0,
    }
    detail = (
        f"kappa={summary.kappa.kappa:.3f}"
        f" bar={summary.bar_dynamics_mean:.1f}%"
        f" hits={summary.hits_percent:.1f}%"
        f" latency={summary.mean_latency_s:.2f}s"
        f" runtime={strong_benchmark['elapsed_s']:.1f}s"
    )
    report(capsys, "closed-loop strong-subject benchmark", all(checks.values()), detail)
    assert all(checks.values()), {k: v for k, v in checks.items() if not v}


def test_null_subject_control(null_benchmark, capsys):
    traces = [
        trace for run in null_benchmark["online"].runs for trace in run.traces
    ]
    summary = summarize_traces(traces)
    truths = [t.true_class for t in traces]
    chance = chance_kappa(truths, n_perm=10_000, seed=0)
    frames = [
        epoch_trials(rec, man, EpochingConfig())
        for rec, man in null_benchmark["offline"]
    ]
    quiet_counts = {}
    for band in ("alpha", "beta"):
        modulated, baseline = class_band_samples(frames, band)
        result = channel_difference_test(
            modulated, baseline, n_shuffles=1_000, seed=0
        )
        quiet_counts[band] = int(np.sum(result.adjusted_p > 0.05))
    checks = {
        "|kappa|<=0.15": abs(summary.kappa.kappa) <= 0.15,
        "chance_kappa within +/-0.02": abs(chance) <= 0.02,
        "alpha quiet channels>=29": quiet_counts["alpha"] >= 29,
        "beta quiet channels>=29": quiet_counts["beta"] >= 29,
    }
    detail = (
        f"kappa={summary.kappa.kappa:+.3f}"
        f" chance={chance:+.4f}"
        f" quiet(alpha)={quiet_counts['alpha']}/32"
        f" quiet(beta)={quiet_counts['beta']}/32"
    )
    report(capsys, "null-subject control", all(checks.values()), detail)
    assert all(checks.values()), {k: v for k, v in checks.items() if not v}


def test_evidence_accumulation_analytics(capsys):
    state = EvidenceState()
    config = DecisionConfig(yes_threshold=0.6, no_threshold=0.6, timeout_s=20.0)
    closed_form_ok = True
    first_crossing = None
    decision = None
    for step in range(1, 21):
        state = accumulate(state, 1.0)
        expected = 1.0 - 0.5 * 0.95**step
        if abs(state.prob_modulated - expected) > 1e-12:
            closed_form_ok = False
        if first_crossing is None and state.prob_modulated >= 0.6:
            first_crossing = step
        if decision is None:
            # output i becomes available i+1 seconds into decoding: the
            # first window needs 2 s of samples, each later one 1 s more
            decision = check_decision(state, config, elapsed_s=step + 1.0)
    checks = {
        "closed form to 1e-12": closed_form_ok,
        "first 0.6 crossing at step 5": first_crossing == 5,
        "decision Yes at 6.0s": decision is not None
        and decision.outcome is Outcome.YES
        and decision.decision_time_s == 6.0,
    }
    detail = f"crossing_step={first_crossing} decision_time={decision.decision_time_s}"
    report(capsys, "evidence accumulation analytics", all(checks.values()), detail)
    assert all(checks.values()), {k: v for k, v in checks.items() if not v}


def test_oracle_equivalence(capsys):
    rng = np.random.default_rng(12)
    kappa_exact = True
    for _ in range(1_000):
        n = int(rng.integers(2, 40))
        alphabet = ["Yes", "No", "Timeout", "Other"][: int(rng.integers(2, 5))]
        predicted = rng.choice(alphabet, size=n)
        true = rng.choice(alphabet, size=n)
        ours = cohen_kappa(predicted, true)
        ref_kappa, ref_pa, ref_pe = confusion_kappa(predicted, true)
        if not (
            ours.kappa == ref_kappa
            and ours.p_a == ref_pa
            and ours.p_e == ref_pe
        ):
            kappa_exact = False
            break
    bh_close = True
    for _ in range(1_000):
        m = int(rng.integers(1, 64))
        p = rng.uniform(size=m)
        if np.max(np.abs(bh_correct(p) - bh_stepup(p))) > 1e-12:
            bh_close = False
            break
    X = rng.standard_normal((200, 64))
    y_pm = np.sign(X[:, 1] + rng.standard_normal(200))
    X_aug = np.hstack([X, np.ones((200, 1))])
    v, _, _ = solve_hinge_dual(X_aug, y_pm, c=1.0)
    objective = svm_objective(v, X_aug, y_pm, 1.0)
    reference, _ = svm_subgradient_reference(X, y_pm, 1.0)
    hinge_rel = abs(objective - reference) / reference
    checks = {
        "kappa exact on 1000 pairs": kappa_exact,
        "bh within 1e-12 on 1000 vectors": bh_close,
        "hinge objective within 1e-3 relative": hinge_rel <= 1e-3,
    }
    detail = f"hinge_rel={hinge_rel:.2e}"
    report(capsys, "oracle equivalence", all(checks.values()), detail)
    assert all(checks.values()), {k: v for k, v in checks.items() if not v}


def test_filter_verification(capsys):
    spec = FilterSpec(7.0, 30.0)
    coeffs = design_bandpass(spec)
    response = np.ones(2, dtype=complex)
    for section in coeffs.sections:
        response = response * magnitude_response(
            section[:3], section[3:], [7.0, 30.0], spec.sample_rate_hz
        )
    edges_db = 20.0 * np.log10(np.abs(response))
    edges_ok = bool(np.all(np.abs(edges_db - (-3.0)) <= 0.5))

    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 4096))
    state = new_filter_state(coeffs, 3)
    whole, _ = filter_block(coeffs, state, x)
    state = new_filter_state(coeffs, 3)
    pieces = []
    cursor = 0
    for size in (1, 7, 64, 500, 4096 - 572):
        block, state = filter_block(coeffs, state, x[:, cursor : cursor + size])
        pieces.append(block)
        cursor += size
    blocks_ok = bool(np.array_equal(np.hstack(pieces), whole))

    fs = spec.sample_rate_hz
    t = np.arange(int(4 * fs)) / fs
    tone = np.sin(2.0 * np.pi * 15.0 * t)[None, :]
    filtered = filter_zero_phase(coeffs, tone)[0]
    middle = slice(int(fs), int(3 * fs))
    correlation = np.correlate(filtered[middle], tone[0][middle], mode="full")
    lag = int(np.argmax(correlation)) - (correlation.size // 2)
    zero_phase_ok = lag == 0

    checks = {
        "-3dB at 7 and 30 Hz within 0.5 dB": edges_ok,
        "block partition bit-exact": blocks_ok,
        "zero-phase lag 0 on in-band sinusoid": zero_phase_ok,
    }
    detail = f"edges_db=({edges_db[0]:+.2f}, {edges_db[1]:+.2f}) lag={lag}"
    report(capsys, "filter verification", all(checks.values()), detail)
    assert all(checks.values()), {k: v for k, v in checks.items() if not v}


def test_timing_conformance(tmp_path, capsys):
    timing = ProtocolTiming()
    question_s = 2.0
    expected = [0.0]
    for duration in (
        timing.inter_trial_s,
        timing.rest_s,
        timing.announce_s,
        timing.pre_cue_gap_s,
        question_s,
        timing.post_question_gap_s,
        timing.bell_s,
        timing.pre_feedback_gap_s,
    ):
        expected.append(expected[-1] + duration)
    plan = SessionPlan(
        "timing", (standard_run_plan("t-r1", 6, 0.5, seed=4),)
    )
    result = run_session(
        plan,
        SyntheticSubjectSource(strong_profile(seed=31)),
        decoder=undecided_decoder(),
        clock=VirtualClock(),
        data_dir=tmp_path,
    )
    records = read_jsonl(tmp_path / "timing.log.jsonl")
    onsets = [
        r["payload"]["onset_in_run_s"]
        for r in records
        if r["kind"] == "PhaseChange" and r["payload"]["trial_index"] == 0
    ]
    phases_match = onsets[: len(expected)] == expected
    decoding_at_23_5 = onsets[len(expected) - 1] == 23.5
    decisions = [t.decision for t in result.runs[0].trials]
    timeout_exact = all(
        d.outcome is Outcome.TIMEOUT and d.decision_time_s == 20.0
        for d in decisions
    )
    ended_onset = onsets[len(expected)] if len(onsets) > len(expected) else None
    ended_ok = ended_onset == 23.5 + 20.0
    checks = {
        "phase onsets equal the documented sums": phases_match,
        "decoding onset 23.5 s": decoding_at_23_5,
        "timeout at exactly 20 s": timeout_exact,
        "trial end at 43.5 s": ended_ok,
    }
    detail = f"onsets={onsets[:9]} end={ended_onset}"
    report(capsys, "timing conformance", all(checks.values()), detail)
    assert all(checks.values()), {k: v for k, v in checks.items() if not v}


def test_replay_determinism(strong_benchmark, capsys):
    decoder = strong_benchmark["decoder"]
    log_path = strong_benchmark["root"] / "online" / "bench-on.log.jsonl"
    views = {
        view.run_id: view
        for view in run_views_from_records(read_jsonl(log_path))
    }
    all_identical = True
    for run in strong_benchmark["online"].runs:
        live = _decision_bytes(
            (t.decision.outcome.value, t.decision.decision_time_s)
            for t in run.trials
        )
        logged = _decision_bytes(
            (t.decision.outcome.value, t.decision.decision_time_s)
            for t in views[run.plan.run_id].traces
        )
        manifest = read_manifest(run.manifest_path)
        recording = read_recording(run.recording_path)
        replayed_trials = replay_run(
            recording, manifest, decoder, run.plan.decision
        )
        replayed = _decision_bytes(
            (t.decision.outcome.value, t.decision.decision_time_s)
            for t in replayed_trials
        )
        if not (live == logged == replayed):
            all_identical = False
    report(
        capsys,
        "replay determinism",
        all_identical,
        f"runs={len(strong_benchmark['online'].runs)} byte-identical={all_identical}",
    )
    assert all_identical
