"""Independent reference implementations used only to check the package.

Everything here is deliberately naive: direct definitions, brute force,
no shared code with src/. Keep it that way.
"""

from __future__ import annotations

import numpy as np


def magnitude_response(b, a, freq_hz, sample_rate_hz):
    """|H(f)| by evaluating both polynomials on the unit circle."""
    w = 2.0 * np.pi * np.asarray(freq_hz, dtype=float) / sample_rate_hz
    z = np.exp(-1j * w)  # H(z) = sum b_k z^-k / sum a_k z^-k
    num = np.zeros_like(z, dtype=complex)
    den = np.zeros_like(z, dtype=complex)
    for k, bk in enumerate(b):
        num = num + bk * z**k
    for k, ak in enumerate(a):
        den = den + ak * z**k
    return np.abs(num / den)


def difference_equation(b, a, x):
    """Direct-form-I recurrence, one sample at a time (1-D input)."""
    b = [float(v) for v in b]
    a = [float(v) for v in a]
    y = []
    for n in range(len(x)):
        acc = 0.0
        for k, bk in enumerate(b):
            if n - k >= 0:
                acc += bk * float(x[n - k])
        for k, ak in enumerate(a[1:], start=1):
            if n - k >= 0:
                acc -= ak * y[n - k]
        y.append(acc / a[0])
    return np.array(y)


def periodogram_band_fraction(x, sample_rate_hz, low_hz, high_hz):
    """Fraction of total spectral power inside [low_hz, high_hz]."""
    x = np.asarray(x, dtype=float)
    spec = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(len(x), d=1.0 / sample_rate_hz)
    inside = spec[(freqs >= low_hz) & (freqs <= high_hz)].sum()
    return inside / spec.sum()


def confusion_kappa(predicted, true):
    """Cohen's kappa from an explicitly built confusion matrix."""
    predicted = list(predicted)
    true = list(true)
    classes = sorted(set(predicted) | set(true), key=str)
    k = len(classes)
    index = {c: i for i, c in enumerate(classes)}
    table = np.zeros((k, k))
    for p, t in zip(predicted, true):
        table[index[p], index[t]] += 1
    n = table.sum()
    p_a = np.trace(table) / n
    p_e = float(np.sum(table.sum(axis=1) * table.sum(axis=0)) / (n * n))
    if p_e >= 1.0:
        return 0.0, p_a, p_e
    return (p_a - p_e) / (1.0 - p_e), p_a, p_e


def bh_stepup(p_values):
    """Benjamini-Hochberg adjusted p-values straight from the definition."""
    p = np.asarray(p_values, dtype=float)
    m = len(p)
    order = np.argsort(p, kind="stable")
    adjusted_sorted = np.empty(m)
    running_min = 1.0
    for rank in range(m, 0, -1):
        candidate = m * p[order[rank - 1]] / rank
        running_min = min(running_min, candidate)
        adjusted_sorted[rank - 1] = min(running_min, 1.0)
    adjusted = np.empty(m)
    adjusted[order] = adjusted_sorted
    return adjusted


def svm_objective(v, X_aug, y_pm, c):
    """0.5*||v||^2 + C * sum hinge, bias folded in as the last component."""
    margins = 1.0 - y_pm * (X_aug @ v)
    return 0.5 * float(v @ v) + c * float(np.clip(margins, 0.0, None).sum())


def svm_subgradient_reference(X, y_pm, c, n_iter=60000, seed=0):
    """Plain subgradient descent on the hinge objective; returns best objective.

    Independent of the package's solver: full-batch subgradient with a
    1/sqrt(t) step and best-iterate tracking.
    """
    X = np.asarray(X, dtype=float)
    y_pm = np.asarray(y_pm, dtype=float)
    X_aug = np.hstack([X, np.ones((X.shape[0], 1))])
    rng = np.random.default_rng(seed)
    v = rng.normal(scale=1e-3, size=X_aug.shape[1])
    best = svm_objective(v, X_aug, y_pm, c)
    best_v = v.copy()
    # The quadratic term makes the objective 1-strongly convex, so the
    # classic 1/t schedule applies and converges at O(log t / t).
    for t in range(n_iter):
        margins = 1.0 - y_pm * (X_aug @ v)
        active = margins > 0.0
        grad = v - c * (y_pm[active] @ X_aug[active])
        v = v - grad / (t + 1.0)
        f = svm_objective(v, X_aug, y_pm, c)
        if f < best:
            best = f
            best_v = v.copy()
    return best, best_v


def platt_reference_fit(scores, labels01):
    """Fit the Platt sigmoid by scipy Nelder-Mead on the smoothed NLL."""
    from scipy.optimize import minimize

    scores = np.asarray(scores, dtype=float)
    labels01 = np.asarray(labels01, dtype=int)
    n_pos = int(labels01.sum())
    n_neg = len(labels01) - n_pos
    hi = (n_pos + 1.0) / (n_pos + 2.0)
    lo = 1.0 / (n_neg + 2.0)
    targets = np.where(labels01 == 1, hi, lo)

    def nll(params):
        a, b = params
        z = a * scores + b
        # p(y=1) = sigmoid(-z)
        return float(np.sum(targets * np.logaddexp(0.0, z) + (1.0 - targets) * np.logaddexp(0.0, -z)))

    res = minimize(nll, x0=[0.0, 0.0], method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000})
    return float(res.x[0]), float(res.x[1])
