import numpy as np
import pytest
from scipy.stats import kstest

from vbci.dataset import TrialClass, TrialFrames
from vbci.errors import (
    DegenerateLabels,
    EmptyInput,
    EmptyTrace,
    LengthMismatch,
    OutOfRange,
    TooFewSamples,
)
from vbci.metrics import (
    TrialTrace,
    assistive_truth,
    bar_dynamics,
    bh_correct,
    channel_difference_test,
    channel_permutation_test,
    chance_kappa,
    cohen_kappa,
    format_p_value,
    hits_at_threshold,
    latency_to_correct_hit,
    summarize_traces,
    topo_class_difference,
)
from vbci.online import Decision, Outcome
from vbci.protocol import ConfidenceRating

from .oracles import bh_stepup, confusion_kappa


def yes_trace(probs, decision=None, index=0):
    points = tuple((2.0 + k, p) for k, p in enumerate(probs))
    return TrialTrace(index, TrialClass.MODULATED, points, decision)


def no_trace(probs, decision=None, index=0):
    points = tuple((2.0 + k, p) for k, p in enumerate(probs))
    return TrialTrace(index, TrialClass.BASELINE, points, decision)


class TestCohenKappa:
    def test_perfect_agreement(self):
        r = cohen_kappa(["Y", "N", "Y", "N"], ["Y", "N", "Y", "N"])
        assert r.kappa == 1.0 and r.p_a == 1.0

    def test_worked_small_case(self):
        r = cohen_kappa(["Y", "Y", "Y", "N"], ["Y", "Y", "N", "N"])
        assert r.p_a == 0.75
        assert r.p_e == 0.5
        assert r.kappa == 0.5

    def test_constant_predictor_scores_zero(self):
        r = cohen_kappa(["Y"] * 4, ["Y", "Y", "N", "N"])
        assert r.p_a == 0.5 and r.p_e == 0.5 and r.kappa == 0.0

    def test_degenerate_marginals_declared_zero(self):
        r = cohen_kappa(["Y", "Y"], ["Y", "Y"])
        assert r.kappa == 0.0 and r.p_e == 1.0

    def test_guards(self):
        with pytest.raises(LengthMismatch):
            cohen_kappa(["Y"], ["Y", "N"])
        with pytest.raises(EmptyInput):
            cohen_kappa([], [])

    def test_relabeling_invariance(self):
        pred = ["Y", "N", "Y", "T", "N"]
        true = ["Y", "Y", "N", "N", "N"]
        rename = {"Y": "alpha", "N": "beta", "T": "gamma"}
        a = cohen_kappa(pred, true)
        b = cohen_kappa([rename[x] for x in pred], [rename[x] for x in true])
        assert a == b

    def test_matches_confusion_matrix_oracle_exactly(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            n = int(rng.integers(1, 30))
            k = int(rng.integers(2, 4))
            pred = [f"c{int(i)}" for i in rng.integers(0, k, n)]
            true = [f"c{int(i)}" for i in rng.integers(0, k, n)]
            ours = cohen_kappa(pred, true)
            kappa, p_a, p_e = confusion_kappa(pred, true)
            assert (ours.kappa, ours.p_a, ours.p_e) == (kappa, p_a, p_e)


class TestChanceKappa:
    def test_balanced_labels_center_on_zero(self):
        labels = ["Y"] * 10 + ["N"] * 10
        mean = chance_kappa(labels, n_perm=4000, seed=0)
        assert abs(mean) <= 0.02

    def test_deterministic_per_seed(self):
        labels = ["Y", "N", "N", "Y", "N", "Y"]
        assert chance_kappa(labels, 200, seed=3) == chance_kappa(
            labels, 200, seed=3
        )

    def test_single_class_is_zero(self):
        assert chance_kappa(["Y"] * 8, n_perm=50) == 0.0

    def test_empty_rejected(self):
        with pytest.raises(EmptyInput):
            chance_kappa([])

    def test_agrees_with_direct_permutation_loop(self):
        labels = ["Y", "Y", "N", "N", "N", "Y", "N", "Y", "Y", "N"]
        got = chance_kappa(labels, n_perm=150, seed=9)
        rng = np.random.default_rng(9)
        arr = np.array(labels)
        acc = [
            confusion_kappa(list(arr[rng.permutation(arr.size)]), labels)[0]
            for _ in range(150)
        ]
        assert got == pytest.approx(np.mean(acc), abs=1e-12)


class TestBarDynamics:
    def test_strict_inequality_excludes_exact_half(self):
        probs = [0.5, 0.55, 0.6, 0.65, 0.7, 0.72, 0.71, 0.69, 0.66, 0.62]
        assert bar_dynamics(yes_trace(probs)) == 90.0

    def test_fully_correct_side(self):
        assert bar_dynamics(yes_trace([0.6, 0.7, 0.8])) == 100.0

    def test_same_trace_for_baseline_truth(self):
        probs = [0.5, 0.55, 0.6, 0.65, 0.7, 0.72, 0.71, 0.69, 0.66, 0.62]
        assert bar_dynamics(no_trace(probs)) == 0.0

    def test_label_swap_complement(self):
        probs = [0.5, 0.3, 0.8, 0.5, 0.45]
        at_half = 100.0 * probs.count(0.5) / len(probs)
        total = bar_dynamics(yes_trace(probs)) + bar_dynamics(no_trace(probs))
        assert total == pytest.approx(100.0 - at_half, abs=1e-9)

    def test_empty_trace_rejected(self):
        with pytest.raises(EmptyTrace):
            bar_dynamics(yes_trace([]))

    def test_unknown_truth_rejected(self):
        trace = TrialTrace(0, TrialClass.UNKNOWN, ((2.0, 0.6),))
        with pytest.raises(DegenerateLabels):
            bar_dynamics(trace)

    def test_timestamps_must_increase(self):
        with pytest.raises(OutOfRange):
            TrialTrace(0, TrialClass.MODULATED, ((2.0, 0.5), (2.0, 0.6)))


class TestHitsAtThreshold:
    def test_correct_crossing_counts(self):
        assert hits_at_threshold([yes_trace([0.5, 0.55, 0.61])]) == 100.0

    def test_wrong_side_crossing_counts_as_miss(self):
        assert hits_at_threshold([yes_trace([0.45, 0.39, 0.3])]) == 0.0

    def test_no_crossing_counts_as_miss(self):
        assert hits_at_threshold([yes_trace([0.5, 0.55, 0.58])]) == 0.0

    def test_mixed_set_percentage(self):
        traces = [
            yes_trace([0.61]),
            yes_trace([0.39]),
            no_trace([0.39]),
            no_trace([0.5, 0.45, 0.41]),  # never crosses 0.6 on either side
        ]
        assert hits_at_threshold(traces) == 50.0

    def test_barely_above_half_threshold(self):
        traces = [yes_trace([0.52, 0.6]), no_trace([0.48, 0.4])]
        assert hits_at_threshold(traces, threshold=0.51) == 100.0

    def test_empty_rejected(self):
        with pytest.raises(EmptyInput):
            hits_at_threshold([])


class TestLatency:
    def test_constant_certain_posterior_crosses_at_six(self):
        probs = [1.0 - 0.5 * 0.95**i for i in range(1, 20)]
        assert latency_to_correct_hit(yes_trace(probs)) == 6.0

    def test_never_crossing_is_none(self):
        assert latency_to_correct_hit(yes_trace([0.5, 0.55])) is None

    def test_first_output_crossing(self):
        assert latency_to_correct_hit(yes_trace([0.9, 0.95])) == 2.0

    def test_baseline_uses_complement_evidence(self):
        assert latency_to_correct_hit(no_trace([0.45, 0.38])) == 3.0


class TestChannelPermutation:
    def test_identical_constant_groups_give_p_one(self):
        a = np.ones((10, 3))
        b = np.ones((12, 3))
        p = channel_permutation_test(a, b, n_shuffles=200, seed=0)
        np.testing.assert_array_equal(p, np.ones(3))

    def test_fully_separated_groups_give_p_zero(self):
        a = np.ones((100, 1))
        b = np.zeros((100, 1))
        p = channel_permutation_test(a, b, n_shuffles=1000, seed=0)
        assert p[0] == 0.0
        assert format_p_value(p[0]) == "< 0.001"

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(5)
        a, b = rng.standard_normal((8, 4)), rng.standard_normal((9, 4))
        p1 = channel_permutation_test(a, b, 300, seed=11)
        p2 = channel_permutation_test(a, b, 300, seed=11)
        np.testing.assert_array_equal(p1, p2)

    def test_duplicate_channels_get_identical_p(self):
        rng = np.random.default_rng(6)
        col_a, col_b = rng.standard_normal((10, 1)), rng.standard_normal((10, 1))
        a = np.hstack([col_a, col_a])
        b = np.hstack([col_b, col_b])
        p = channel_permutation_test(a, b, 400, seed=2)
        assert p[0] == p[1]  # one shared shuffle drives every channel

    def test_too_few_samples(self):
        with pytest.raises(TooFewSamples):
            channel_permutation_test(np.ones((1, 2)), np.ones((5, 2)))

    def test_channel_count_mismatch(self):
        with pytest.raises(LengthMismatch):
            channel_permutation_test(np.ones((5, 2)), np.ones((5, 3)))

    def test_null_p_values_are_uniform(self):
        rng = np.random.default_rng(7)
        ps = []
        for _ in range(200):
            a = rng.standard_normal((10, 1))
            b = rng.standard_normal((10, 1))
            ps.append(channel_permutation_test(a, b, 333, seed=1)[0])
        assert kstest(ps, "uniform").statistic < 0.15

    def test_result_bundle_adjusts_and_labels(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal((10, 32))
        b = rng.standard_normal((10, 32)) + 0.1
        res = channel_difference_test(a, b, n_shuffles=100, seed=0)
        assert len(res.channel_names) == 32
        assert np.all(res.adjusted_p >= res.raw_p)
        assert np.all((res.adjusted_p >= 0) & (res.adjusted_p <= 1))
        np.testing.assert_allclose(
            res.observed_difference, a.mean(0) - b.mean(0)
        )


class TestBenjaminiHochberg:
    def test_four_values_collapse_to_largest(self):
        np.testing.assert_allclose(
            bh_correct([0.01, 0.04, 0.03, 0.02]), [0.04] * 4, atol=1e-15
        )

    def test_three_value_worked_example(self):
        np.testing.assert_allclose(
            bh_correct([0.005, 0.05, 0.5]), [0.015, 0.075, 0.5], atol=1e-15
        )

    def test_single_value_unchanged(self):
        np.testing.assert_array_equal(bh_correct([0.3]), [0.3])

    def test_out_of_range_rejected(self):
        with pytest.raises(OutOfRange):
            bh_correct([0.5, 1.2])
        with pytest.raises(EmptyInput):
            bh_correct([])

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            p = rng.uniform(0, 1, int(rng.integers(1, 40)))
            np.testing.assert_allclose(
                bh_correct(p), bh_stepup(p), atol=1e-12
            )

    def test_monotone_along_sorted_order_and_constant_fixed_point(self):
        rng = np.random.default_rng(2)
        p = rng.uniform(0, 1, 25)
        adj = bh_correct(p)
        order = np.argsort(p, kind="stable")
        assert np.all(np.diff(adj[order]) >= 0)
        np.testing.assert_allclose(bh_correct([0.2] * 6), [0.2] * 6)


def frames_for_topo(seed=0, cz_beta_boost=0.0, n_trials=16):
    rng = np.random.default_rng(seed)
    rows, labels = [], []
    for k in range(n_trials):
        cls = TrialClass.MODULATED if k % 2 else TrialClass.BASELINE
        for _ in range(4):
            row = 1.0 + 0.1 * rng.standard_normal(64)
            if cls is TrialClass.MODULATED:
                row[32 + 15] += cz_beta_boost  # beta block, Cz index 15
            rows.append(row)
            labels.append(cls)
    return TrialFrames(
        "topo", np.array(rows), tuple(labels), np.arange(len(rows)) // 4
    )


class TestTopoDifference:
    def test_null_distribution_stays_near_zero(self):
        frames = frames_for_topo(seed=3)
        out = topo_class_difference([frames], "beta")
        diffs = np.array(out["difference"])
        n_per_class = len(frames.labels) // 2
        std_err = 0.1 * np.sqrt(2.0 / n_per_class)
        assert np.all(np.abs(diffs) < 3.0 * std_err + 0.05)

    def test_boosted_cz_leads_beta_ranking(self):
        frames = frames_for_topo(seed=4, cz_beta_boost=0.5)
        out = topo_class_difference([frames], "beta")
        top3 = np.argsort(out["difference"])[-3:]
        assert 15 in top3
        assert out["channels"][15] == "Cz"
        assert out["band"] == "beta"

    def test_label_swap_negates_exactly(self):
        frames = frames_for_topo(seed=5, cz_beta_boost=0.3)
        swapped_labels = tuple(
            TrialClass.BASELINE
            if c is TrialClass.MODULATED
            else TrialClass.MODULATED
            for c in frames.labels
        )
        swapped = TrialFrames(
            frames.run_id,
            frames.features,
            swapped_labels,
            frames.trial_indices,
        )
        a = np.array(topo_class_difference([frames], 1)["difference"])
        b = np.array(topo_class_difference([swapped], 1)["difference"])
        np.testing.assert_array_equal(a, -b)

    def test_single_class_rejected(self):
        frames = frames_for_topo(seed=6)
        only_mod = TrialFrames(
            frames.run_id,
            frames.features,
            tuple(TrialClass.MODULATED for _ in frames.labels),
            frames.trial_indices,
        )
        with pytest.raises(DegenerateLabels):
            topo_class_difference([only_mod], "alpha")

    def test_band_by_name_or_index(self):
        frames = frames_for_topo(seed=7)
        by_name = topo_class_difference([frames], "alpha")
        by_index = topo_class_difference([frames], 0)
        assert by_name == by_index


class TestAssistiveTruth:
    @pytest.mark.parametrize(
        "outcome,score,expected",
        [
            (Outcome.YES, 5, TrialClass.MODULATED),
            (Outcome.YES, 2, TrialClass.BASELINE),
            (Outcome.NO, 4, TrialClass.BASELINE),
            (Outcome.NO, 1, TrialClass.MODULATED),
        ],
    )
    def test_rating_endorses_or_flips(self, outcome, score, expected):
        decision = Decision(outcome, 6.0)
        assert assistive_truth(decision, ConfidenceRating(0, score)) is expected

    def test_timeout_has_no_truth(self):
        decision = Decision(Outcome.TIMEOUT, 20.0)
        assert assistive_truth(decision, ConfidenceRating(0, 5)) is None


class TestSummarizeTraces:
    def test_summary_fields(self):
        traces = [
            yes_trace(
                [0.55, 0.61], decision=Decision(Outcome.YES, 3.0), index=0
            ),
            no_trace(
                [0.45, 0.39], decision=Decision(Outcome.NO, 3.0), index=1
            ),
            yes_trace(
                [0.5] * 19, decision=Decision(Outcome.TIMEOUT, 20.0), index=2
            ),
        ]
        s = summarize_traces(traces)
        assert s.n_trials == 3 and s.n_timeouts == 1
        assert s.hits_percent == pytest.approx(200.0 / 3.0)
        assert s.mean_latency_s == 3.0
        assert 0 < s.kappa.p_a < 1
        d = s.as_dict()
        assert d["n_trials"] == 3 and d["mean_latency_s"] == 3.0

    def test_missing_decision_rejected(self):
        with pytest.raises(EmptyInput):
            summarize_traces([yes_trace([0.6])])
