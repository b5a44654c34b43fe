"""Subject-specific decoder training.

Pipeline: epoch offline runs into normalized band-power frames, rank the 64
features by out-of-bag permutation importance aggregated across leave-one-run-
out folds and re-seeded ensemble iterations, sweep the feature count for the
best cross-validated linear-model accuracy, train the final linear model on
all runs, and calibrate posteriors on out-of-fold decision scores.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .dataset import (
    EpochingConfig,
    Recording,
    RunManifest,
    TrainedDecoder,
    TrialClass,
    TrialFrames,
    epoch_trials,
)
from .errors import TooFewRuns
from .forest import EnsembleConfig, oob_importance, train_bagged_trees
from .montage import CHANNELS_32, N_CHANNELS
from .svm import LinearModel, fit_calibration, train_linear_svm

N_FEATURES = 2 * N_CHANNELS
TOP_FEATURE_COUNT = 20
MIN_FEATURE_COUNT = 4

RANK_AGGREGATION = "mean_rank"
IMPORTANCE_AGGREGATION = "mean_importance"

_SEED_BOUND = 2**63


@dataclass(frozen=True)
class ImportanceRanking:
    """Aggregated feature ordering from the selection stage.

    ``rank_score`` is the per-feature mean rank (1 = most important) unless
    importance aggregation was requested, in which case it is the negated
    mean importance so that smaller is always better. ``top_features`` lists
    the 20 best flat feature indices, best first.
    """

    rank_score: np.ndarray
    top_features: tuple[int, ...]
    n_aggregated: int

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "rank_score", np.asarray(self.rank_score, dtype=np.float64)
        )
        object.__setattr__(
            self, "top_features", tuple(int(i) for i in self.top_features)
        )
        if len(self.top_features) != TOP_FEATURE_COUNT:
            raise ValueError(
                f"expected {TOP_FEATURE_COUNT} top features, got"
                f" {len(self.top_features)}"
            )
        if len(set(self.top_features)) != TOP_FEATURE_COUNT:
            raise ValueError("top features must be distinct")
        if any(not 0 <= i < self.rank_score.size for i in self.top_features):
            raise ValueError("top feature index out of range")


def _labels_binary(frames: TrialFrames) -> np.ndarray:
    return np.array(
        [1 if c is TrialClass.MODULATED else 0 for c in frames.labels],
        dtype=np.int64,
    )


def _fold_split(
    runs: Sequence[TrialFrames], held_out: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    train_x = np.vstack(
        [r.features for i, r in enumerate(runs) if i != held_out]
    )
    train_y = np.concatenate(
        [_labels_binary(r) for i, r in enumerate(runs) if i != held_out]
    )
    test_x = runs[held_out].features
    test_y = _labels_binary(runs[held_out])
    return train_x, train_y, test_x, test_y


def select_top_features(
    runs: Sequence[TrialFrames],
    config: EnsembleConfig = EnsembleConfig(),
    aggregation: str = RANK_AGGREGATION,
) -> ImportanceRanking:
    """Rank features by ensemble importance across folds and iterations.

    For every leave-one-run-out fold and every re-seeded iteration, a bagged
    ensemble is trained on the retained runs and its out-of-bag permutation
    importances are converted to ranks (1 = most important). Ranks are
    averaged over all fold-iteration pairs; the 20 smallest mean ranks win,
    ties broken toward the lower feature index. All per-pair seeds are drawn
    up front from ``config.seed`` so results do not depend on execution
    order.
    """
    if len(runs) < 2:
        raise TooFewRuns("feature selection needs at least 2 runs")
    if aggregation not in (RANK_AGGREGATION, IMPORTANCE_AGGREGATION):
        raise ValueError(f"unknown aggregation {aggregation!r}")
    n_folds = len(runs)
    master = np.random.default_rng(config.seed)
    seeds = master.integers(
        0, _SEED_BOUND, size=(n_folds, config.n_iterations, 2), dtype=np.int64
    )
    vectors = []
    for fold in range(n_folds):
        train_x, train_y, _, _ = _fold_split(runs, fold)
        for it in range(config.n_iterations):
            ens_seed, imp_seed = seeds[fold, it]
            ensemble = train_bagged_trees(
                train_x, train_y, replace(config, seed=int(ens_seed))
            )
            importance = oob_importance(
                ensemble, train_x, train_y, seed=int(imp_seed)
            )
            if aggregation == RANK_AGGREGATION:
                vectors.append(rankdata(-importance, method="average"))
            else:
                vectors.append(-importance)
    score = np.mean(vectors, axis=0)
    order = np.argsort(score, kind="stable")
    return ImportanceRanking(
        rank_score=score,
        top_features=tuple(int(i) for i in order[:TOP_FEATURE_COUNT]),
        n_aggregated=len(vectors),
    )


def _out_of_fold_scores(
    runs: Sequence[TrialFrames],
    feature_indices: Sequence[int],
    regularization_c: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Held-out decision scores and labels across all leave-one-run-out folds."""
    idx = np.asarray(feature_indices, dtype=np.intp)
    scores = []
    labels = []
    for fold in range(len(runs)):
        train_x, train_y, test_x, test_y = _fold_split(runs, fold)
        model = train_linear_svm(
            train_x[:, idx], train_y, c=regularization_c
        )
        scores.append(model.decision_scores(test_x[:, idx]))
        labels.append(test_y)
    return np.concatenate(scores), np.concatenate(labels)


def _best_count(counts: Sequence[int], accuracies: Sequence[float]) -> int:
    """Count with the highest accuracy; ties go to the smallest count."""
    best = max(accuracies)
    return min(k for k, a in zip(counts, accuracies) if a == best)


def sweep_feature_count(
    ranking: ImportanceRanking,
    runs: Sequence[TrialFrames],
    regularization_c: float = 1.0,
) -> tuple[int, ...]:
    """Pick how many of the top-ranked features the final model keeps.

    Evaluates leave-one-run-out accuracy of a linear model on the top-K
    features for K from 20 down to 4 and returns the top-K* indices where K*
    maximizes mean accuracy (ties favor the smaller K).
    """
    if len(runs) < 2:
        raise TooFewRuns("the feature-count sweep needs at least 2 runs")
    counts = list(range(TOP_FEATURE_COUNT, MIN_FEATURE_COUNT - 1, -1))
    accuracies = []
    for k in counts:
        idx = ranking.top_features[:k]
        scores, labels = _out_of_fold_scores(runs, idx, regularization_c)
        accuracies.append(float(np.mean((scores > 0).astype(int) == labels)))
    k_star = _best_count(counts, accuracies)
    return ranking.top_features[:k_star]


def _decoder_from_model(
    selected: Sequence[int],
    model: LinearModel,
    calibration_a: float,
    calibration_b: float,
    epoching: EpochingConfig,
) -> TrainedDecoder:
    pairs = tuple((f % N_CHANNELS, f // N_CHANNELS) for f in selected)
    return TrainedDecoder(
        selected_features=pairs,
        svm_weights=model.weights,
        svm_bias=model.bias,
        feature_means=model.feature_means,
        feature_scales=model.feature_scales,
        calibration_a=calibration_a,
        calibration_b=calibration_b,
        alpha_filter=epoching.alpha_filter,
        beta_filter=epoching.beta_filter,
        window_s=epoching.window_s,
        step_s=epoching.step_s,
    )


def train_decoder_from_frames(
    runs: Sequence[TrialFrames],
    ensemble: EnsembleConfig = EnsembleConfig(),
    regularization_c: float = 1.0,
    aggregation: str = RANK_AGGREGATION,
    epoching: EpochingConfig = EpochingConfig(),
) -> TrainedDecoder:
    """Train a decoder from already-epoched feature frames.

    Calibration is fitted on out-of-fold decision scores so the posterior
    reflects held-out behavior rather than training fit.
    """
    decoder, _ = train_decoder_reported(
        runs,
        ensemble=ensemble,
        regularization_c=regularization_c,
        aggregation=aggregation,
        epoching=epoching,
    )
    return decoder


def train_decoder_reported(
    runs: Sequence[TrialFrames],
    ensemble: EnsembleConfig = EnsembleConfig(),
    regularization_c: float = 1.0,
    aggregation: str = RANK_AGGREGATION,
    epoching: EpochingConfig = EpochingConfig(),
) -> tuple[TrainedDecoder, dict]:
    """Train a decoder and report leave-one-run-out validation accuracy.

    The report's accuracy numbers come from the same held-out decision
    scores the Platt calibration is fitted on.
    """
    if len(runs) < 2:
        raise TooFewRuns("decoder training needs at least 2 offline runs")
    ranking = select_top_features(runs, ensemble, aggregation)
    selected = sweep_feature_count(ranking, runs, regularization_c)
    idx = np.asarray(selected, dtype=np.intp)
    all_x = np.vstack([r.features for r in runs])
    all_y = np.concatenate([_labels_binary(r) for r in runs])
    final = train_linear_svm(all_x[:, idx], all_y, c=regularization_c)
    fold_accuracy = []
    score_parts = []
    label_parts = []
    for fold in range(len(runs)):
        train_x, train_y, test_x, test_y = _fold_split(runs, fold)
        model = train_linear_svm(train_x[:, idx], train_y, c=regularization_c)
        scores = model.decision_scores(test_x[:, idx])
        fold_accuracy.append(
            float(np.mean((scores > 0).astype(np.int64) == test_y))
        )
        score_parts.append(scores)
        label_parts.append(test_y)
    oof_scores = np.concatenate(score_parts)
    oof_labels = np.concatenate(label_parts)
    cal = fit_calibration(oof_scores, oof_labels)
    decoder = _decoder_from_model(selected, final, cal.a, cal.b, epoching)
    report = {
        "n_runs": len(runs),
        "n_frames": int(all_x.shape[0]),
        "n_selected_features": len(selected),
        "selected_features": [
            {
                "channel": CHANNELS_32[channel],
                "band": "alpha" if band == 0 else "beta",
            }
            for channel, band in decoder.selected_features
        ],
        "cross_validation": {
            "n_folds": len(runs),
            "per_fold_accuracy": fold_accuracy,
            "held_out_accuracy": float(
                np.mean((oof_scores > 0).astype(np.int64) == oof_labels)
            ),
        },
        "calibration": {"a": cal.a, "b": cal.b},
    }
    return decoder, report


def train_decoder(
    runs: Sequence[tuple[Recording, RunManifest]],
    epoching: EpochingConfig = EpochingConfig(),
    ensemble: EnsembleConfig = EnsembleConfig(),
    regularization_c: float = 1.0,
    aggregation: str = RANK_AGGREGATION,
) -> TrainedDecoder:
    """Train a decoder from offline recordings and their trial manifests."""
    frames = [epoch_trials(rec, man, epoching) for rec, man in runs]
    return train_decoder_from_frames(
        frames,
        ensemble=ensemble,
        regularization_c=regularization_c,
        aggregation=aggregation,
        epoching=epoching,
    )
