"""Significance tests for comparing retrieval accuracies across seeds.

Tail probabilities go through the regularised incomplete beta function, so the
Student-t and F survival functions share one numerical path.
"""

import logging
import math

import numpy as np
from scipy.special import betainc

logger = logging.getLogger(__name__)

_ZERO_SS = 1e-12


def student_t_sf(t: float, df: float) -> float:
    """Upper-tail probability ``P(T > t)`` of Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    tail = 0.5 * float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return tail if t >= 0 else 1.0 - tail


def f_sf(f: float, d1: float, d2: float) -> float:
    """Upper-tail probability of the F distribution."""
    if math.isinf(f):
        return 0.0
    if f <= 0:
        return 1.0
    return float(betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)))


def t_test_one_tailed(a: list[float] | np.ndarray, b: list[float] | np.ndarray) -> tuple[float, float]:
    """Pooled-variance unpaired t-test of ``mean(a) > mean(b)``.

    With zero pooled variance the statistic saturates: equal means give
    ``t = 0, p = 0.5``; otherwise ``t = ±inf`` and ``p`` is 0 or 1.

    Returns:
        ``(t, p)`` with ``p`` the upper-tail probability at ``n_a + n_b - 2`` dof.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError(f"Each sample needs at least 2 values, got {a.size} and {b.size}.")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("Samples must be finite.")

    df = a.size + b.size - 2
    diff = float(a.mean() - b.mean())
    pooled = (((a - a.mean()) ** 2).sum() + ((b - b.mean()) ** 2).sum()) / df
    if pooled <= 0.0:
        if diff == 0.0:
            return 0.0, 0.5
        return (math.inf, 0.0) if diff > 0 else (-math.inf, 1.0)

    t = diff / math.sqrt(pooled * (1.0 / a.size + 1.0 / b.size))
    return t, student_t_sf(t, df)


def rm_anova(table: list[list[float]] | np.ndarray) -> tuple[float, float]:
    """One-way repeated-measures ANOVA on a ``subjects x conditions`` table.

    ``F = (SS_cond / (k-1)) / (SS_err / ((n-1)(k-1)))`` with
    ``SS_err = SS_total - SS_cond - SS_subj``. A vanishing error term saturates:
    no condition effect gives ``F = 0, p = 1``; otherwise ``F = inf, p = 0``.
    """
    data = np.asarray(table, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError(f"ANOVA table must be 2-D, got shape {data.shape}.")
    n, k = data.shape
    if n < 2 or k < 2:
        raise ValueError(f"ANOVA needs >= 2 subjects and >= 2 conditions, got {n} x {k}.")
    if not np.isfinite(data).all():
        raise ValueError("ANOVA table is incomplete: every cell must hold a finite value.")

    grand = data.mean()
    ss_total = float(((data - grand) ** 2).sum())
    ss_cond = float(n * ((data.mean(axis=0) - grand) ** 2).sum())
    ss_subj = float(k * ((data.mean(axis=1) - grand) ** 2).sum())
    ss_err = ss_total - ss_cond - ss_subj

    tolerance = _ZERO_SS * max(ss_total, 1.0)
    if ss_err <= tolerance:
        if ss_cond <= tolerance:
            return 0.0, 1.0
        return math.inf, 0.0

    d1 = k - 1
    d2 = (n - 1) * (k - 1)
    f = (ss_cond / d1) / (ss_err / d2)
    return f, f_sf(f, d1, d2)


def stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""
