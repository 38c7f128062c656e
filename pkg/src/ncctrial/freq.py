"""Frequentist treatment-vs-control tests: separate, pooled and period-adjusted regression."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import stats

from .datagen import TrialDataset
from .design import split_controls


@dataclass
class FreqResult:
    estimate: float
    se: float
    statistic: float
    df: int
    p_value: float
    reject: bool
    method: str
    dropped: list[str] = field(default_factory=list)


def upper_p_value(t, df):
    """One-sided upper-tail p-value of a Student-t statistic."""
    return stats.t.sf(t, df)


def _result(est, se, df, alpha, method, dropped=None):
    if se > 0:
        t = est / se
    else:
        t = 0.0 if est == 0 else np.copysign(np.inf, est)
    p = float(upper_p_value(t, df))
    return FreqResult(float(est), float(se), float(t), int(df), p, p < alpha, method, dropped or [])


def two_sample_ttest(treat, control, alpha=0.025, method="ttest") -> FreqResult:
    """Pooled-variance two-sample t-test of ``mean(treat) > mean(control)``."""
    treat, control = np.asarray(treat, float), np.asarray(control, float)
    n1, n0 = len(treat), len(control)
    if n1 < 2 or n0 < 2:
        raise ValueError("need at least 2 observations per group")
    df = n1 + n0 - 2
    ss = ((treat - treat.mean()) ** 2).sum() + ((control - control.mean()) ** 2).sum()
    se = np.sqrt(ss / df * (1.0 / n1 + 1.0 / n0))
    return _result(treat.mean() - control.mean(), se, df, alpha, method)


def separate_ttest(data: TrialDataset, k: int, alpha: float = 0.025) -> FreqResult:
    """Arm ``k`` against its concurrent controls only."""
    split = split_controls(data, k)
    return two_sample_ttest(data.y[data.arm == k], data.y[split.concurrent], alpha, "separate")


def pooled_ttest(data: TrialDataset, k: int, alpha: float = 0.025) -> FreqResult:
    """Arm ``k`` against concurrent and non-concurrent controls, no time adjustment."""
    split = split_controls(data, k)
    controls = np.concatenate([split.nonconcurrent, split.concurrent])
    return two_sample_ttest(data.y[data.arm == k], data.y[controls], alpha, "pooled")


def design_matrix(arm, time, arms, levels, time_prefix):
    """Intercept, one indicator per experimental arm, one per non-reference time level."""
    cols = [np.ones(len(arm))]
    names = ["intercept"]
    for a in arms:
        cols.append((arm == a).astype(float))
        names.append(f"arm{a}")
    for t in levels:
        cols.append((time == t).astype(float))
        names.append(f"{time_prefix}{t}")
    return np.column_stack(cols), names


def drop_aliased(X, names, keep=None, tol=1e-9):
    """Remove columns that are linear combinations of earlier ones.

    Returns the reduced matrix, kept names and the dropped names. Columns are
    tested in order so the intercept and treatment columns win over time
    columns.
    """
    basis = np.empty((X.shape[0], 0))
    kept = []
    for i in range(X.shape[1]):
        v = X[:, i].astype(float)
        norm0 = np.linalg.norm(v)
        for _ in range(2):  # second pass restores orthogonality
            v = v - basis @ (basis.T @ v)
        if norm0 > 0 and np.linalg.norm(v) > tol * norm0:
            basis = np.column_stack([basis, v / np.linalg.norm(v)])
            kept.append(i)
    dropped = [names[i] for i in range(X.shape[1]) if i not in kept]
    if keep is not None and keep in dropped:
        raise ValueError(f"column {keep} is aliased and cannot be estimated")
    return X[:, kept], [names[i] for i in kept], dropped


def ols(X, y):
    """Least squares via QR. Returns coefficients, residual variance, (XᵀX)⁻¹ and df."""
    n, p = X.shape
    q, r = np.linalg.qr(X)
    beta = scipy.linalg.solve_triangular(r, q.T @ y)
    resid = y - X @ beta
    df = n - p
    if df < 1:
        raise ValueError("no residual degrees of freedom")
    rinv = scipy.linalg.solve_triangular(r, np.eye(p))
    return beta, float(resid @ resid) / df, rinv @ rinv.T, df


def regression_model(data: TrialDataset, k: int, alpha: float = 0.025) -> FreqResult:
    """Linear model with arm effects and a step-function period effect.

    Uses every patient up to the end of arm ``k``'s final period.
    """
    last = int(data.period[data.arm == k].max())
    use = data.period <= last
    arm, period, y = data.arm[use], data.period[use], data.y[use]
    arms = sorted(set(arm[arm > 0].tolist()))
    X, names = design_matrix(arm, period, arms, range(2, last + 1), "period")
    X, names, dropped = drop_aliased(X, names, keep=f"arm{k}")
    if dropped:
        warnings.warn(f"aliased columns dropped: {dropped}", stacklevel=2)
    beta, sigma2, cov, df = ols(X, y)
    i = names.index(f"arm{k}")
    return _result(beta[i], np.sqrt(sigma2 * cov[i, i]), df, alpha, "regression", dropped)
