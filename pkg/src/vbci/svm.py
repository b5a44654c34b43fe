"""Linear max-margin classifier and posterior calibration.

The classifier minimizes 0.5*||v||^2 + C * sum_i hinge(y_i, v . x_i) with the
bias folded in as a constant augmented feature, solved exactly by dual
coordinate descent (box-constrained, one pass updates each dual variable in
cyclic order). The final duality gap certifies the objective value, so tests
can bound the distance to the true optimum without trusting the solver.

Calibration fits posterior(s) = 1 / (1 + exp(a*s + b)) to held-out decision
scores by regularized maximum likelihood with smoothed targets
(N+ + 1)/(N+ + 2) and 1/(N- + 2), via a damped Newton iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DegenerateLabels

STD_CLAMP = 1e-12  # constant columns get unit scale instead of exploding


@dataclass
class LinearModel:
    """Standardized linear classifier: score = w . (x - mean)/scale + bias."""

    weights: np.ndarray
    bias: float
    regularization_c: float
    feature_means: np.ndarray
    feature_scales: np.ndarray

    def decision_scores(self, features: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(features, dtype=np.float64))
        z = (X - self.feature_means) / self.feature_scales
        return z @ self.weights + self.bias

    def predict(self, features: np.ndarray) -> np.ndarray:
        return (self.decision_scores(features) > 0).astype(np.int64)


def _sigmoid_of_negative(z: np.ndarray) -> np.ndarray:
    """1/(1+exp(z)) evaluated without overflow on either tail."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    ez = np.exp(-z[pos])
    out[pos] = ez / (1.0 + ez)
    ez = np.exp(z[~pos])
    out[~pos] = 1.0 / (1.0 + ez)
    return out


@dataclass(frozen=True)
class Calibration:
    a: float
    b: float

    def posterior(self, scores) -> np.ndarray | float:
        s = np.atleast_1d(np.asarray(scores, dtype=np.float64))
        out = _sigmoid_of_negative(self.a * s + self.b)
        if np.ndim(scores) == 0:
            return float(out[0])
        return out


@njit(cache=True)
def _dual_cd_passes(X_aug, y_pm, c, q_diag, alpha, v, tol, max_passes):
    n, d = X_aug.shape
    for sweep in range(max_passes):
        worst = 0.0
        for i in range(n):
            if q_diag[i] <= 0.0:
                continue
            g = 0.0
            for k in range(d):
                g += v[k] * X_aug[i, k]
            g = g * y_pm[i] - 1.0
            a_old = alpha[i]
            if a_old <= 0.0:
                pg = g if g < 0.0 else 0.0
            elif a_old >= c:
                pg = g if g > 0.0 else 0.0
            else:
                pg = g
            if pg != 0.0:
                a_new = a_old - g / q_diag[i]
                if a_new < 0.0:
                    a_new = 0.0
                elif a_new > c:
                    a_new = c
                delta = (a_new - a_old) * y_pm[i]
                if delta != 0.0:
                    for k in range(d):
                        v[k] += delta * X_aug[i, k]
                alpha[i] = a_new
            abs_pg = pg if pg >= 0.0 else -pg
            if abs_pg > worst:
                worst = abs_pg
        if worst < tol:
            return sweep + 1
    return max_passes


def solve_hinge_dual(
    X_aug: np.ndarray,
    y_pm: np.ndarray,
    c: float,
    tol: float = 1e-10,
    max_passes: int = 20000,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Solve the L2-regularized hinge objective over augmented inputs.

    Returns (v, alpha, duality_gap). By weak duality the primal objective of
    v is within duality_gap of the optimum.
    """
    X_aug = np.ascontiguousarray(X_aug, dtype=np.float64)
    y_pm = np.ascontiguousarray(y_pm, dtype=np.float64)
    n, d = X_aug.shape
    q_diag = np.einsum("ij,ij->i", X_aug, X_aug)
    alpha = np.zeros(n)
    v = np.zeros(d)
    _dual_cd_passes(X_aug, y_pm, c, q_diag, alpha, v, tol, max_passes)
    margins = 1.0 - y_pm * (X_aug @ v)
    primal = 0.5 * float(v @ v) + c * float(np.clip(margins, 0.0, None).sum())
    dual = float(alpha.sum()) - 0.5 * float(v @ v)
    return v, alpha, primal - dual


def train_linear_svm(
    features: np.ndarray,
    labels: np.ndarray,
    c: float = 1.0,
    tol: float = 1e-10,
    max_passes: int = 20000,
) -> LinearModel:
    """Fit the standardized linear classifier on 0/1 labels."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (X.shape[0],):
        raise DegenerateLabels(f"labels {y.shape} do not match features {X.shape}")
    if np.unique(y).size < 2:
        raise DegenerateLabels("both classes must be present")
    means = X.mean(axis=0)
    scales = X.std(axis=0)
    scales = np.where(scales < STD_CLAMP, 1.0, scales)
    z = (X - means) / scales
    X_aug = np.hstack([z, np.ones((X.shape[0], 1))])
    y_pm = 2.0 * y - 1.0
    v, _, _ = solve_hinge_dual(X_aug, y_pm, c, tol=tol, max_passes=max_passes)
    return LinearModel(
        weights=v[:-1],
        bias=float(v[-1]),
        regularization_c=c,
        feature_means=means,
        feature_scales=scales,
    )


def _nll(a: float, b: float, scores: np.ndarray, targets: np.ndarray) -> float:
    z = a * scores + b
    # sum of t*z + log(1+exp(-z)), stable on both tails
    return float(
        np.sum(targets * z + np.logaddexp(0.0, -z))
    )


def fit_calibration(
    scores: np.ndarray,
    labels: np.ndarray,
    max_iter: int = 100,
    min_step: float = 1e-10,
    sigma: float = 1e-12,
    tol: float = 1e-5,
) -> Calibration:
    """Damped Newton fit of the two-parameter posterior sigmoid.

    Smoothed targets regularize the fit so perfectly separated scores still
    yield finite parameters.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape or s.ndim != 1:
        raise DegenerateLabels(f"scores {s.shape} do not match labels {y.shape}")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("both classes must be present among scores")
    hi = (n_pos + 1.0) / (n_pos + 2.0)
    lo = 1.0 / (n_neg + 2.0)
    targets = np.where(y == 1, hi, lo)

    a = 0.0
    b = float(np.log((n_neg + 1.0) / (n_pos + 1.0)))
    fval = _nll(a, b, s, targets)
    for _ in range(max_iter):
        p = _sigmoid_of_negative(a * s + b)
        q = 1.0 - p
        d2 = p * q
        h11 = float(np.sum(s * s * d2)) + sigma
        h22 = float(np.sum(d2)) + sigma
        h21 = float(np.sum(s * d2))
        d1 = targets - p
        g1 = float(np.sum(s * d1))
        g2 = float(np.sum(d1))
        if abs(g1) < tol and abs(g2) < tol:
            break
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= min_step:
            new_a = a + step * da
            new_b = b + step * db
            new_f = _nll(new_a, new_b, s, targets)
            if new_f < fval + 1e-4 * step * gd:
                a, b, fval = new_a, new_b, new_f
                break
            step /= 2.0
        else:
            break
    return Calibration(a=a, b=b)
