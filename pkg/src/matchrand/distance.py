"""Mahalanobis distance machinery, reference distributions, and thresholds.

Everything is on the squared-distance scale: the matching objective, the
thresholds, and the reported sums all use D^2 so that the caliper reduction
and the parametric reference stay on one scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform
from scipy.stats import f as f_dist

from .core import InsufficientDataError, ValidationError

# Finite surrogate for a forbidden edge; the solver never sees a true infinity.
BIG = 1e12

# Sentinel returned by dynamic_quantile when the threshold is fully relaxed.
RELAXED = math.inf


class ContradictionError(ValueError):
    """A pair is simultaneously forced and prevented."""


def covariance_pinv(encoded: np.ndarray) -> np.ndarray:
    """Pseudo-inverse of the sample covariance (ddof=1) of the rows.

    Constant columns contribute nothing to the metric: the pseudo-inverse
    zeroes the corresponding directions.
    """
    X = np.atleast_2d(np.asarray(encoded, dtype=float))
    n = X.shape[0]
    if n < 2:
        raise InsufficientDataError("covariance needs at least 2 observations")
    S = np.atleast_2d(np.cov(X, rowvar=False, ddof=1))
    return np.linalg.pinv(S, hermitian=True)


def mahalanobis_sq(x: np.ndarray, y: np.ndarray, s_pinv: np.ndarray) -> float:
    """Squared Mahalanobis distance (x-y)' S^+ (x-y)."""
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    val = float(d @ s_pinv @ d)
    return max(val, 0.0)


def _sqrt_factor(s_pinv: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root L with L L' = S^+ (for vectorized distances)."""
    vals, vecs = np.linalg.eigh(np.atleast_2d(s_pinv))
    vals = np.clip(vals, 0.0, None)
    return vecs * np.sqrt(vals)


def mahalanobis_sq_matrix(X: np.ndarray, s_pinv: np.ndarray) -> np.ndarray:
    """All pairwise squared Mahalanobis distances among the rows of X."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = X @ _sqrt_factor(s_pinv)
    if X.shape[0] < 2:
        return np.zeros((X.shape[0], X.shape[0]))
    return squareform(pdist(Z, metric="sqeuclidean"))


@dataclass
class DistanceMatrix:
    """Symmetric matrix of pairwise D^2 with constraint sentinels.

    Forbidden pairs hold ``inf`` (the solver uses the finite surrogate BIG);
    forced pairs hold exact zero and are flagged in ``forced``.
    """

    d: np.ndarray
    forced: np.ndarray = None  # boolean mask
    forbidden: np.ndarray = None
    # Internal construction from pairwise-distance routines guarantees a
    # symmetric, zero-diagonal, non-negative matrix; skip re-validation.
    trusted: bool = False

    def __post_init__(self) -> None:
        self.d = np.asarray(self.d, dtype=float)
        n = self.d.shape[0]
        if self.d.shape != (n, n):
            raise ValidationError("distance matrix must be square")
        if self.forced is None:
            self.forced = np.zeros((n, n), dtype=bool)
        if self.forbidden is None:
            self.forbidden = np.isinf(self.d) | (self.d >= BIG)
        if self.trusted:
            return
        if not np.allclose(np.diagonal(self.d), 0.0):
            raise ValidationError("distance matrix diagonal must be zero")
        finite = np.isfinite(self.d)
        if np.any(self.d[finite] < 0):
            raise ValidationError("distances must be non-negative")
        if not np.array_equal(self.d, self.d.T):
            raise ValidationError("distance matrix must be symmetric")

    @property
    def n(self) -> int:
        return self.d.shape[0]

    def free_mask(self) -> np.ndarray:
        """Pairs carrying a real distance (neither forced nor forbidden)."""
        free = ~(self.forced | self.forbidden)
        np.fill_diagonal(free, False)
        return free

    def to_text(self) -> str:
        """Lower-triangular debug dump."""
        lines = []
        for i in range(self.n):
            cells = []
            for j in range(i):
                if self.forbidden[i, j]:
                    cells.append("INF")
                elif self.forced[i, j]:
                    cells.append("FORCE")
                else:
                    cells.append(f"{self.d[i, j]:.6g}")
            lines.append(" ".join(cells))
        return "\n".join(lines)


def build_matrix(X_subset: np.ndarray, s_pinv: np.ndarray,
                 force: Sequence[tuple[int, int]] = (),
                 prevent: Sequence[tuple[int, int]] = ()) -> DistanceMatrix:
    """Distance matrix over a participant subset with constraint sentinels.

    ``s_pinv`` must come from the covariance of ALL enrolled participants,
    not only the subset.  ``force`` pins pairs at distance 0; ``prevent``
    makes pairs unmatchable.
    """
    fset = {frozenset(p) for p in force}
    pset = {frozenset(p) for p in prevent}
    both = fset & pset
    if both:
        raise ContradictionError(f"pairs both forced and prevented: {sorted(map(tuple, both))}")
    d = mahalanobis_sq_matrix(X_subset, s_pinv)
    n = d.shape[0]
    forced = np.zeros((n, n), dtype=bool)
    for pair in fset:
        i, j = tuple(pair)
        d[i, j] = d[j, i] = 0.0
        forced[i, j] = forced[j, i] = True
    for pair in pset:
        i, j = tuple(pair)
        d[i, j] = d[j, i] = np.inf
    return DistanceMatrix(d=d, forced=forced, trusted=True)


@dataclass
class ReferenceDistribution:
    """The law of randomly matched distances, empirical or parametric.

    Empirical mode stores one array of pair distances per bootstrap sample
    (each sample is a uniformly random perfect pairing of the participants).
    Parametric mode refers D^2 / (2p) to the F(p, n-p) distribution.
    """

    mode: str  # "empirical" | "parametric"
    samples: list = field(default_factory=list)
    n_boot: int = 0
    p: int = 0
    n: int = 0
    # Samples produced internally from an already-screened distance matrix
    # are finite and non-negative by construction; skip re-validation.
    trusted: bool = False

    def __post_init__(self) -> None:
        if self.mode == "empirical":
            if not self.samples:
                raise ValidationError("empirical reference needs samples")
            if self.trusted:
                return
            pooled = np.concatenate(
                [np.ravel(np.asarray(s, dtype=float)) for s in self.samples])
            if pooled.size and (not np.all(np.isfinite(pooled))
                                or np.any(pooled < 0)):
                raise ValidationError("reference samples must be finite and >= 0")
        elif self.mode == "parametric":
            if not (self.n > self.p >= 1):
                raise ValidationError("parametric reference needs n > p >= 1")
        else:
            raise ValidationError(f"unknown reference mode {self.mode!r}")

    def pooled(self) -> np.ndarray:
        if self.mode != "empirical":
            raise ValidationError("pooled() only applies to empirical references")
        return np.concatenate([np.asarray(s, dtype=float) for s in self.samples])


def empirical_reference(matrix: DistanceMatrix, n_boot: int,
                        rng: np.random.Generator) -> ReferenceDistribution:
    """Bootstrap the randomly-matched-distance law from the full matrix.

    Each bootstrap sample draws one uniformly random perfect pairing of the
    n participants (floor(n/2) disjoint pairs, one idle when n is odd) and
    records the free pair distances; sentinel entries never enter a sample.
    """
    n = matrix.n
    if n < 4:
        raise InsufficientDataError("empirical reference needs n >= 4")
    free = matrix.free_mask()
    if int(np.count_nonzero(np.triu(free, 1))) < 2:
        raise InsufficientDataError("fewer than 2 free pairs available")
    half = n // 2
    perms = rng.permuted(np.tile(np.arange(n), (n_boot, 1)), axis=1)
    a, b = perms[:, :half], perms[:, half:2 * half]
    keep = free[a, b]
    dist = matrix.d[a, b]
    if keep.all():
        samples = list(dist)
    else:
        samples = [dist[i][keep[i]] for i in range(n_boot)]
    return ReferenceDistribution(mode="empirical", samples=samples,
                                 n_boot=n_boot, trusted=True)


def quantile(ref: ReferenceDistribution, q: float) -> float:
    """Threshold value at quantile q, on the D^2 scale.

    Empirical: nearest-rank quantile within each bootstrap sample, averaged
    across samples.  Parametric: 2p * F^{-1}_{(p, n-p)}(q).
    """
    if not (0.0 < q < 1.0):
        raise ValidationError("quantile requires 0 < q < 1")
    if ref.mode == "parametric":
        return float(2 * ref.p * f_dist.ppf(q, ref.p, ref.n - ref.p))
    sizes = {np.asarray(s).size for s in ref.samples}
    if len(sizes) == 1 and 0 not in sizes:
        # Equal-length samples (no sentinels dropped): vectorized path.
        arr = np.sort(np.asarray(ref.samples, dtype=float), axis=1)
        m = arr.shape[1]
        k = max(math.ceil(q * m), 1)
        return float(arr[:, k - 1].mean())
    vals = []
    for s in ref.samples:
        arr = np.sort(np.asarray(s, dtype=float))
        m = arr.size
        if m == 0:
            continue
        k = math.ceil(q * m)
        vals.append(arr[max(k, 1) - 1])
    if not vals:
        raise InsufficientDataError("all bootstrap samples are empty")
    return float(np.mean(vals))


def dynamic_quantile(U_size: int, R_size: int) -> float:
    """Dynamic matching quantile (U-1)/(U+R-1), or RELAXED when U >= R.

    U counts the unmatched participants including the enrolling batch; R is
    the expected number of remaining study entrants.
    """
    if U_size < 1:
        raise ValidationError("U_size must be >= 1")
    if R_size < 0:
        raise ValidationError("R_size must be >= 0")
    if U_size >= R_size:
        return RELAXED
    return (U_size - 1) / (U_size + R_size - 1)


@dataclass(frozen=True)
class ThresholdSpec:
    """How the matching threshold is chosen: fixed quantile, dynamic rule,
    or fully relaxed (always infinity), estimated empirically (E) or via the
    parametric F reference (F)."""

    kind: str  # "fixed" | "dynamic" | "relaxed"
    q: Optional[float] = None
    estimation: str = "E"

    def __post_init__(self) -> None:
        if self.kind not in ("fixed", "dynamic", "relaxed"):
            raise ValidationError(f"unknown threshold kind {self.kind!r}")
        if self.kind == "fixed":
            if self.q is None or not (0.0 < self.q < 1.0):
                raise ValidationError("fixed threshold needs Q strictly inside (0, 1)")
        elif self.q is not None:
            raise ValidationError(f"{self.kind} threshold carries no fixed Q")
        if self.estimation not in ("E", "F"):
            raise ValidationError("estimation must be 'E' or 'F'")
