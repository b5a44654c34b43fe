import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vbci.dataset import TrainedDecoder
from vbci.errors import (
    DegenerateBaseline,
    OutOfRange,
    OutOfRangePosterior,
    StreamEnded,
)
from vbci.online import (
    ArrayStream,
    Decision,
    DecisionConfig,
    EvidenceState,
    Outcome,
    ToneCommand,
    accumulate,
    check_decision,
    decode_posterior_stream,
    feedback_command,
    run_trial_decoding,
)
from vbci.signals import (
    BandBaseline,
    band_power_frames,
    design_bandpass,
    filter_causal,
)

FS = 512.0


class TestAccumulate:
    def test_half_plus_certain_posterior(self):
        state = accumulate(EvidenceState(), 1.0)
        assert state.prob_modulated == pytest.approx(0.525, abs=1e-12)
        assert state.samples_seen == 1

    def test_constant_one_matches_geometric_closed_form(self):
        state = EvidenceState()
        first_crossing = None
        for i in range(1, 20):
            state = accumulate(state, 1.0)
            closed = 1.0 - 0.5 * 0.95**i
            assert state.prob_modulated == pytest.approx(closed, abs=1e-12)
            if first_crossing is None and state.prob_modulated >= 0.6:
                first_crossing = i
        assert first_crossing == 5

    def test_fixed_point(self):
        for q in (0.5, 0.3, 0.8):
            state = EvidenceState(prob_modulated=q)
            assert accumulate(state, q).prob_modulated == pytest.approx(
                q, abs=1e-15
            )

    def test_out_of_range_posterior_rejected(self):
        with pytest.raises(OutOfRangePosterior):
            accumulate(EvidenceState(), 1.5)
        with pytest.raises(OutOfRangePosterior):
            accumulate(EvidenceState(), -0.1)

    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=60))
    def test_evidence_stays_in_unit_interval(self, ps):
        state = EvidenceState()
        for p in ps:
            state = accumulate(state, p)
            assert 0.0 <= state.prob_modulated <= 1.0

    def test_impulse_influence_decays_geometrically(self):
        ref = EvidenceState()
        bumped = EvidenceState()
        j, n = 3, 12
        for i in range(n):
            ref = accumulate(ref, 0.0)
            bumped = accumulate(bumped, 1.0 if i == j else 0.0)
            if i >= j:
                expected = 0.05 * 0.95 ** (i - j)
                assert bumped.prob_modulated - ref.prob_modulated == (
                    pytest.approx(expected, abs=1e-12)
                )

    def test_complement_class_is_one_minus_modulated(self):
        rng = np.random.default_rng(0)
        ps = rng.uniform(0, 1, 30)
        mod = EvidenceState()
        base = EvidenceState()
        for p in ps:
            mod = accumulate(mod, p)
            base = accumulate(base, 1.0 - p)
            assert base.prob_modulated == pytest.approx(
                1.0 - mod.prob_modulated, abs=1e-12
            )

    @settings(max_examples=30)
    @given(
        st.lists(st.floats(0.0, 0.7), min_size=1, max_size=30),
        st.data(),
    )
    def test_pointwise_larger_posteriors_give_larger_trace(self, lows, data):
        highs = [
            data.draw(st.floats(lo, 1.0), label="high") for lo in lows
        ]
        a, b = EvidenceState(), EvidenceState()
        for lo, hi in zip(lows, highs):
            a = accumulate(a, lo)
            b = accumulate(b, hi)
            assert b.prob_modulated >= a.prob_modulated

    def test_state_validation(self):
        with pytest.raises(OutOfRange):
            EvidenceState(prob_modulated=1.2)
        with pytest.raises(OutOfRange):
            EvidenceState(smoothing_old=0.9, smoothing_new=0.2)


class TestDecisionRules:
    def test_yes_crossing(self):
        d = check_decision(
            EvidenceState(prob_modulated=0.61), DecisionConfig(), 7.0
        )
        assert d == Decision(Outcome.YES, 7.0)

    def test_no_crossing_on_complement(self):
        d = check_decision(
            EvidenceState(prob_modulated=0.35), DecisionConfig(), 7.0
        )
        assert d == Decision(Outcome.NO, 7.0)

    def test_timeout_at_twenty_seconds(self):
        d = check_decision(
            EvidenceState(prob_modulated=0.55), DecisionConfig(), 20.0
        )
        assert d == Decision(Outcome.TIMEOUT, 20.0)

    def test_no_decision_inside_window(self):
        assert (
            check_decision(
                EvidenceState(prob_modulated=0.55), DecisionConfig(), 10.0
            )
            is None
        )

    def test_threshold_validation(self):
        with pytest.raises(OutOfRange):
            DecisionConfig(yes_threshold=0.5)
        with pytest.raises(OutOfRange):
            DecisionConfig(no_threshold=1.1)


class TestFeedbackCommand:
    def test_midpoint_is_silent_baseline_tone(self):
        cmd = feedback_command(EvidenceState(prob_modulated=0.5))
        assert cmd == ToneCommand(200, 0.0)

    def test_full_confidence_modulated(self):
        cmd = feedback_command(EvidenceState(prob_modulated=1.0))
        assert cmd == ToneCommand(370, 1.0)

    def test_linear_volume_on_baseline_side(self):
        cmd = feedback_command(EvidenceState(prob_modulated=0.3))
        assert cmd.frequency_hz == 200
        assert cmd.volume == pytest.approx(0.4, abs=1e-12)

    def test_moderate_yes_evidence(self):
        cmd = feedback_command(EvidenceState(prob_modulated=0.73))
        assert cmd.frequency_hz == 370
        assert cmd.volume == pytest.approx(0.46, abs=1e-12)

    def test_tone_validation(self):
        with pytest.raises(OutOfRange):
            ToneCommand(440, 0.5)
        with pytest.raises(OutOfRange):
            ToneCommand(200, 1.5)


class TestDecodePosteriorStream:
    def test_certain_yes_decides_at_six_seconds(self):
        decision, trace = decode_posterior_stream(iter([1.0] * 30))
        assert decision.outcome is Outcome.YES
        assert decision.decision_time_s == 6.0
        assert [t for t, _ in trace] == [2.0, 3.0, 4.0, 5.0, 6.0]
        assert trace[-1][1] >= 0.6

    def test_certain_no_is_symmetric(self):
        decision, trace = decode_posterior_stream(iter([0.0] * 30))
        assert decision.outcome is Outcome.NO
        assert decision.decision_time_s == 6.0

    def test_uninformative_times_out_with_nineteen_outputs(self):
        decision, trace = decode_posterior_stream(iter([0.5] * 30))
        assert decision == Decision(Outcome.TIMEOUT, 20.0)
        assert len(trace) == 19
        assert [t for t, _ in trace] == [float(t) for t in range(2, 21)]

    def test_short_posterior_source_raises(self):
        with pytest.raises(StreamEnded):
            decode_posterior_stream(iter([0.5] * 4))

    def test_output_hook_sees_every_step(self):
        seen = []
        decode_posterior_stream(
            iter([1.0] * 30),
            on_output=lambda t, p, state, tone: seen.append(
                (t, p, state.prob_modulated, tone.frequency_hz)
            ),
        )
        assert len(seen) == 5
        assert seen[0][0] == 2.0 and seen[-1][0] == 6.0
        assert all(p == 1.0 for _, p, _, _ in seen)
        assert seen[-1][3] == 370

    def test_pace_hook_runs_before_each_output(self):
        paced = []
        decode_posterior_stream(iter([1.0] * 30), pace=paced.append)
        assert paced == [2.0, 3.0, 4.0, 5.0, 6.0]


def unit_baseline():
    return BandBaseline(alpha=np.ones(32), beta=np.ones(32))


def handmade_decoder(a=-2.0, b=0.0):
    # single useful input: normalized alpha power at channel index 25
    return TrainedDecoder(
        selected_features=((25, 0), (29, 0), (30, 0), (31, 0)),
        svm_weights=np.array([1.0, 0.0, 0.0, 0.0]),
        svm_bias=-1.0,
        feature_means=np.zeros(4),
        feature_scales=np.ones(4),
        calibration_a=a,
        calibration_b=b,
    )


def alpha_burst_samples(duration_s=25.0, amplitude=3.0):
    n = int(FS * duration_s)
    t = np.arange(n) / FS
    samples = np.zeros((32, n))
    samples[25] = amplitude * np.sin(2 * np.pi * 10.0 * t)
    return samples


class TestRunTrialDecoding:
    def test_injected_certain_posterior_follows_output_timing(self):
        decoder = handmade_decoder()
        stream = ArrayStream(alpha_burst_samples(amplitude=0.1))
        decision, trace = run_trial_decoding(
            decoder,
            stream,
            baseline=unit_baseline(),
            posterior_fn=lambda f: 1.0,
        )
        assert decision == Decision(Outcome.YES, 6.0)
        assert stream.cursor == int(FS * 6.0)

    def test_strong_alpha_drives_yes(self):
        decoder = handmade_decoder()
        decision, trace = run_trial_decoding(
            decoder,
            ArrayStream(alpha_burst_samples(amplitude=3.0)),
            baseline=unit_baseline(),
        )
        assert decision.outcome is Outcome.YES
        assert decision.decision_time_s <= 10.0
        times = [t for t, _ in trace]
        assert times == [2.0 + k for k in range(len(times))]

    def test_silence_times_out(self):
        decoder = handmade_decoder()
        decision, trace = run_trial_decoding(
            decoder,
            ArrayStream(np.zeros((32, int(FS * 25)))),
            baseline=unit_baseline(),
        )
        # zero signal gives score -1, posterior sigmoid(-2*-1... ) fixed
        assert decision.outcome in (Outcome.NO, Outcome.TIMEOUT)

    def test_stream_exhaustion_raises(self):
        decoder = handmade_decoder()
        with pytest.raises(StreamEnded):
            run_trial_decoding(
                decoder,
                ArrayStream(np.zeros((32, int(FS * 5)))),
                baseline=unit_baseline(),
                posterior_fn=lambda f: 0.5,
            )

    def test_zero_baseline_rejected(self):
        decoder = handmade_decoder()
        bad = BandBaseline(alpha=np.zeros(32), beta=np.ones(32))
        with pytest.raises(DegenerateBaseline):
            run_trial_decoding(
                decoder,
                ArrayStream(alpha_burst_samples()),
                baseline=bad,
            )

    def test_streamed_features_match_whole_signal_filtering(self):
        decoder = handmade_decoder()
        rng = np.random.default_rng(3)
        samples = rng.standard_normal((32, int(FS * 12)))
        baseline = BandBaseline(
            alpha=np.full(32, 0.7), beta=np.full(32, 1.3)
        )
        streamed = []
        with pytest.raises(StreamEnded):
            run_trial_decoding(
                decoder,
                ArrayStream(samples),
                baseline=baseline,
                posterior_fn=lambda f: streamed.append(f.copy()) or 0.5,
            )
        alpha = filter_causal(design_bandpass(decoder.alpha_filter), samples)
        beta = filter_causal(design_bandpass(decoder.beta_filter), samples)
        frames = band_power_frames(alpha, beta, sample_rate_hz=FS)
        assert len(streamed) == len(frames) == 11
        for got, frame in zip(streamed, frames):
            np.testing.assert_array_equal(
                got, np.concatenate(
                    [frame.alpha_power / 0.7, frame.beta_power / 1.3]
                )
            )


class TestArrayStream:
    def test_sequential_reads_partition_the_signal(self):
        data = np.arange(20.0).reshape(2, 10)
        stream = ArrayStream(data)
        a = stream.read(4)
        b = stream.read(6)
        np.testing.assert_array_equal(np.concatenate([a, b], axis=1), data)
        with pytest.raises(StreamEnded):
            stream.read(1)
