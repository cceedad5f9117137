"""Potential outcomes under sharp effects and the three analyses.

Randomization-based inference (RBI) compares the observed statistic against
its law over fresh runs of the whole randomization scheme; comparators are
the pooled two-sample t-test and covariate-adjusted OLS.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import t as t_dist

from .core import ValidationError

# Returned where a statistic does not exist (single-arm sequence, zero
# pooled variance).  Callers filter on it explicitly.
UNDEFINED = float("nan")


@dataclass(frozen=True)
class OutcomeDataset:
    """Control potential outcomes with a sharp constant effect imposed."""

    y0: np.ndarray
    delta: float
    W: np.ndarray
    y_obs: np.ndarray

    def __post_init__(self) -> None:
        if not (len(self.y0) == len(self.W) == len(self.y_obs)):
            raise ValidationError("outcome dataset length mismatch")


@dataclass(frozen=True)
class RbiResult:
    p_value: float
    h_observed: float
    reference_stats: np.ndarray  # |h*| values
    M: int


@dataclass(frozen=True)
class TestResult:
    p_value: float
    estimate: float
    df: float = float("nan")


def impose_sharp_effect(y0: Sequence[float], W: Sequence[int],
                        delta: float) -> OutcomeDataset:
    """Observed outcomes y0 + delta * W under the constant-effect model."""
    y0 = np.asarray(y0, dtype=float)
    W = np.asarray(W, dtype=int)
    if y0.shape != W.shape:
        raise ValidationError("y0 and W lengths differ")
    return OutcomeDataset(y0=y0, delta=float(delta), W=W,
                          y_obs=y0 + float(delta) * W)


def diff_in_means(y: Sequence[float], W: Sequence[int]) -> float:
    """mean(y | W=1) - mean(y | W=0); UNDEFINED (nan) when an arm is empty."""
    y = np.asarray(y, dtype=float)
    W = np.asarray(W, dtype=int)
    n1 = int(W.sum())
    if n1 == 0 or n1 == len(W):
        return UNDEFINED
    return float(y[W == 1].mean() - y[W == 0].mean())


def rbi_p_value(y_obs: Sequence[float], W_observed: Sequence[int],
                scheme_replayer: Callable[[int], np.ndarray], M: int,
                seed=0, reference: Optional[Sequence[float]] = None,
                exact: bool = False) -> RbiResult:
    """Monte Carlo randomization test of the sharp null.

    ``scheme_replayer(draw_index)`` must regenerate a fresh arm sequence
    from the same covariates, batching, and scheme configuration.  Draws
    with an undefined statistic (a single-arm sequence) are replaced.  A
    precomputed ``reference`` of |h*| values may be supplied instead of the
    replayer (for pooled designs); the replayer is then unused.
    ``exact=True`` treats the reference as a full enumeration of the
    sequence set (which contains the observed one) and drops the +1/(M+1)
    Monte Carlo correction.
    """
    if M < 1:
        raise ValidationError("M must be >= 1")
    y_obs = np.asarray(y_obs, dtype=float)
    h_obs = diff_in_means(y_obs, W_observed)
    if np.isnan(h_obs):
        raise ValidationError("observed sequence has an empty arm")
    if reference is not None:
        stats = np.abs(np.asarray(reference, dtype=float))
        if len(stats) != M:
            raise ValidationError("reference length must equal M")
    else:
        stats = np.empty(M)
        draw = 0
        filled = 0
        while filled < M:
            W_star = scheme_replayer(draw)
            draw += 1
            h = diff_in_means(y_obs, W_star)
            if np.isnan(h):
                continue  # degenerate sequence, redraw
            stats[filled] = abs(h)
            filled += 1
    k = int(np.count_nonzero(stats >= abs(h_obs) - 1e-12))
    p = k / M if exact else (k + 1) / (M + 1)
    return RbiResult(p_value=p, h_observed=h_obs, reference_stats=stats,
                     M=M)


def t_test(y: Sequence[float], W: Sequence[int]) -> TestResult:
    """Pooled-variance two-sample t-test, two-sided."""
    y = np.asarray(y, dtype=float)
    W = np.asarray(W, dtype=int)
    y1, y0 = y[W == 1], y[W == 0]
    if len(y1) < 2 or len(y0) < 2:
        raise ValidationError("t-test needs >= 2 per arm")
    est = float(y1.mean() - y0.mean())
    n1, n0 = len(y1), len(y0)
    df = n1 + n0 - 2
    s2 = ((n1 - 1) * y1.var(ddof=1) + (n0 - 1) * y0.var(ddof=1)) / df
    if s2 <= 0:
        return TestResult(p_value=UNDEFINED, estimate=est, df=df)
    se = np.sqrt(s2 * (1 / n1 + 1 / n0))
    t = est / se
    p = 2 * t_dist.sf(abs(t), df)
    return TestResult(p_value=float(p), estimate=est, df=df)


def ols_adjusted_test(y: Sequence[float], W: Sequence[int],
                      X: np.ndarray) -> TestResult:
    """OLS of y on [1, W, X]; two-sided t test of the W coefficient.

    Rank-deficient designs use the pseudo-inverse with residual degrees of
    freedom n - rank.
    """
    y = np.asarray(y, dtype=float)
    W = np.asarray(W, dtype=int)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, p = X.shape
    if len(y) != n or len(W) != n:
        raise ValidationError("length mismatch")
    if n <= p + 2:
        raise ValidationError("OLS needs n > p + 2")
    design = np.column_stack([np.ones(n), W, X])
    xtx_inv = np.linalg.pinv(design.T @ design, hermitian=True)
    beta = xtx_inv @ design.T @ y
    resid = y - design @ beta
    rank = int(np.linalg.matrix_rank(design))
    df = n - rank
    est = float(beta[1])
    if df <= 0:
        return TestResult(p_value=UNDEFINED, estimate=est, df=df)
    rss = float(resid @ resid)
    tss = float(((y - y.mean()) ** 2).sum())
    if rss <= 1e-14 * max(tss, 1.0):
        # Perfect fit up to rounding: the coefficient is exact; p capped at 0.
        return TestResult(p_value=0.0, estimate=est, df=df)
    sigma2 = rss / df
    var_w = sigma2 * xtx_inv[1, 1]
    if var_w <= 0:
        return TestResult(p_value=0.0, estimate=est, df=df)
    t = est / np.sqrt(var_w)
    p = 2 * t_dist.sf(abs(t), df)
    return TestResult(p_value=float(p), estimate=est, df=df)
