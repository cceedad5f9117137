"""Balance, efficiency, power, and match-quality summaries.

Per-replicate quantities (SMD, matched-distance sums, test p-values) are
collected into ReplicateResult records; ``summarize`` aggregates them with
Monte Carlo standard errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import nct, t as t_dist

from .core import MatchState, ValidationError
from .distance import ReferenceDistribution

SMD_CAP = 10.0

# Random completions of the unmatched set averaged per replicate; one draw
# is the paper's estimand, averaging only tightens its Monte Carlo error.
_COMPLETION_DRAWS = 10


@dataclass
class ReplicateResult:
    scheme: str
    estimate: float
    p_values: dict = field(default_factory=dict)  # analysis name -> p
    smd: Optional[np.ndarray] = None  # per encoded covariate
    sum_matched_distances: float = float("nan")
    matched_distances: tuple = ()
    unmatched_count: int = 0


@dataclass
class MetricsSummary:
    scheme: str
    n_replicates: int
    rejection_rates: dict  # analysis -> (rate, mcse) at alpha
    alpha: float
    estimator_sd: float
    estimator_sd_mcse: float
    mean_abs_smd: Optional[np.ndarray]
    mean_sum_distances: float
    mean_sum_distances_mcse: float


def smd(values: Sequence[float], W: Sequence[int]) -> float:
    """Absolute standardized mean difference with pooled arm SDs.

    Degenerate pooled variance gives 0 for equal means and the cap (10)
    otherwise.
    """
    values = np.asarray(values, dtype=float)
    W = np.asarray(W, dtype=int)
    v1, v0 = values[W == 1], values[W == 0]
    if len(v1) == 0 or len(v0) == 0:
        raise ValidationError("smd needs both arms non-empty")
    diff = abs(float(v1.mean() - v0.mean()))
    s1 = v1.var(ddof=1) if len(v1) > 1 else 0.0
    s0 = v0.var(ddof=1) if len(v0) > 1 else 0.0
    pool = np.sqrt((s1 + s0) / 2)
    if pool == 0:
        return 0.0 if diff == 0 else SMD_CAP
    return min(diff / pool, SMD_CAP)


def smd_profile(X: np.ndarray, W: Sequence[int]) -> np.ndarray:
    """Per-column SMD over an encoded covariate matrix."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.array([smd(X[:, j], W) for j in range(X.shape[1])])


def sum_matched_distances(match_state: MatchState, full_matrix,
                          id_index: dict, rng) -> float:
    """Sum of matched D^2 plus a random completion of the unmatched set.

    The unmatched participants are paired by a uniformly random perfect
    pairing (odd leftover idle); the completion is averaged over a few
    draws of the supplied rng.
    """
    d = full_matrix.d if hasattr(full_matrix, "d") else np.asarray(full_matrix)
    base = 0.0
    matched_ids = set()
    for pair in match_state.pairs:
        a, b = tuple(pair)
        base += float(d[id_index[a], id_index[b]])
        matched_ids.update(pair)
    rest = [id_index[pid] for pid in id_index if pid not in matched_ids]
    if len(rest) < 2:
        return base
    rest = np.asarray(sorted(rest))
    half = len(rest) // 2
    extra = 0.0
    for _ in range(_COMPLETION_DRAWS):
        perm = rng.permutation(len(rest))
        a = rest[perm[:half]]
        b = rest[perm[half:2 * half]]
        extra += float(d[a, b].sum())
    return base + extra / _COMPLETION_DRAWS


def match_quality_percentiles(matched_distances: Sequence[float],
                              empirical_ref: ReferenceDistribution
                              ) -> np.ndarray:
    """Each matched D^2 as an empirical CDF value of the pooled reference.

    Midpoint rule for ties: (#below + #equal / 2) / m.
    """
    pool = np.sort(empirical_ref.pooled())
    m = pool.size
    if m == 0:
        raise ValidationError("empty reference distribution")
    q = np.asarray(matched_distances, dtype=float)
    below = np.searchsorted(pool, q, side="left")
    upto = np.searchsorted(pool, q, side="right")
    return (below + (upto - below) / 2) / m


def summarize(replicates: Sequence[ReplicateResult],
              alpha: float = 0.05) -> MetricsSummary:
    """Aggregate replicate records with Monte Carlo standard errors."""
    if len(replicates) < 2:
        raise ValidationError("summarize needs >= 2 replicates")
    scheme = replicates[0].scheme
    R = len(replicates)
    rates = {}
    analyses = set()
    for r in replicates:
        analyses.update(r.p_values)
    for name in sorted(analyses):
        ps = np.array([r.p_values[name] for r in replicates
                       if name in r.p_values and np.isfinite(r.p_values[name])])
        if ps.size == 0:
            continue
        rate = float(np.mean(ps <= alpha))
        mcse = float(np.sqrt(max(rate * (1 - rate), 1e-12) / ps.size))
        rates[name] = (rate, mcse)
    ests = np.array([r.estimate for r in replicates], dtype=float)
    ests = ests[np.isfinite(ests)]
    sd = float(np.std(ests, ddof=1)) if ests.size > 1 else float("nan")
    # Asymptotic MCSE of a sample SD: sd / sqrt(2 (R - 1)).
    sd_mcse = sd / np.sqrt(2 * (max(ests.size, 2) - 1))
    smds = [r.smd for r in replicates if r.smd is not None]
    mean_smd = np.mean(np.vstack(smds), axis=0) if smds else None
    sums = np.array([r.sum_matched_distances for r in replicates])
    sums = sums[np.isfinite(sums)]
    if sums.size:
        mean_sum = float(sums.mean())
        mean_sum_mcse = float(sums.std(ddof=1) / np.sqrt(sums.size)) \
            if sums.size > 1 else float("nan")
    else:
        mean_sum = float("nan")
        mean_sum_mcse = float("nan")
    return MetricsSummary(scheme=scheme, n_replicates=R,
                          rejection_rates=rates, alpha=alpha,
                          estimator_sd=sd, estimator_sd_mcse=float(sd_mcse),
                          mean_abs_smd=mean_smd,
                          mean_sum_distances=mean_sum,
                          mean_sum_distances_mcse=mean_sum_mcse)


def analytic_power(n_total: int, delta: float, sd_outcome: float,
                   alpha: float) -> float:
    """Power of the pooled two-sample t-test with equal arms."""
    n_arm = n_total / 2
    df = max(n_total - 2, 1)
    ncp = abs(delta) / (sd_outcome * np.sqrt(2 / n_arm))
    crit = t_dist.ppf(1 - alpha / 2, df)
    return float(nct.sf(crit, df, ncp) + nct.cdf(-crit, df, ncp))


def effective_sample_size(power_observed: float, delta: float,
                          sd_outcome: float, alpha: float = 0.05) -> int:
    """Total N at which the analytic t-test attains the observed power.

    Bisection to +-1 participant; the comparison baseline for "extra
    participants" statements.
    """
    if not (alpha < power_observed < 1):
        raise ValidationError("power must lie strictly in (alpha, 1)")
    if delta == 0 or sd_outcome <= 0:
        raise ValidationError("delta must be nonzero and sd positive")
    lo, hi = 4, 8
    while analytic_power(hi, delta, sd_outcome, alpha) < power_observed:
        hi *= 2
        if hi > 10 ** 9:
            raise ValidationError("requested power unattainable")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if analytic_power(mid, delta, sd_outcome, alpha) < power_observed:
            lo = mid
        else:
            hi = mid
    return hi
