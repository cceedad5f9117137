"""Exact minimum-weight non-bipartite matching with caliper sinks.

The threshold ("caliper") is handled by the standard sink reduction: every
index that may remain unmatched gets a private sink vertex priced at
threshold/2, and sinks of potential partners share zero-cost edges.  A real
pair then beats staying unmatched exactly when its distance is at most the
threshold, and the solver minimizes total matched distance subject to that.

Forbidden pairs (distance >= BIG or the forbidden sentinel) are simply left
out of the solver graph; the maximum-cardinality objective then matches as
many indices as remain feasible, which is equivalent to pricing forbidden
edges at an impractically large number and never reports one in a pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._mwblossom import max_weight_matching
from .core import ValidationError
from .distance import DistanceMatrix

# Costs are scaled to 48-bit integers for the exact solver; ties at the
# threshold boundary break toward matching (see caliper_matching).
_SCALE_BITS = 48


@dataclass(frozen=True)
class MatchingResult:
    pairs: tuple[tuple[int, int], ...]  # sorted (i, j) with i < j
    unmatched: tuple[int, ...]
    total_cost: float

    def __post_init__(self) -> None:
        seen: set[int] = set()
        for i, j in self.pairs:
            if i in seen or j in seen:
                raise ValidationError("overlapping pairs in matching result")
            seen.update((i, j))
        if seen & set(self.unmatched):
            raise ValidationError("index both paired and unmatched")

    @property
    def pair_set(self) -> set[frozenset]:
        return {frozenset(p) for p in self.pairs}


def _free_edges(matrix: DistanceMatrix):
    free = matrix.free_mask()
    iu = np.triu_indices(matrix.n, 1)
    keep = free[iu]
    return iu[0][keep], iu[1][keep], matrix.d[iu[0][keep], iu[1][keep]]


def _result(matrix: DistanceMatrix, mate: np.ndarray, n: int) -> MatchingResult:
    pairs = []
    unmatched = []
    for v in range(n):
        m = int(mate[v])
        if 0 <= m < n:
            if v < m:
                pairs.append((v, m))
        else:
            unmatched.append(v)
    total = float(sum(matrix.d[i, j] for i, j in pairs))
    return MatchingResult(pairs=tuple(pairs), unmatched=tuple(unmatched),
                          total_cost=total)


def min_weight_matching(matrix: DistanceMatrix) -> MatchingResult:
    """Matching of maximum size minimizing the total sum of pair distances.

    Odd instances leave exactly one index unmatched (the phantom-vertex
    construction and the max-cardinality objective coincide); indices whose
    only partners are forbidden also stay unmatched.
    """
    return caliper_matching(matrix, np.inf)


def caliper_matching(matrix: DistanceMatrix, threshold: float,
                     eligibility: Optional[Sequence[bool]] = None) -> MatchingResult:
    """Minimum-cost matching under a caliper.

    A pair forms only if its distance is at most ``threshold`` (boundary ties
    are matched); subject to that, the total matched distance is minimal
    under the cost model where each unmatched eligible index pays
    threshold/2.  ``threshold=inf`` reduces to min_weight_matching.
    ``eligibility`` marks indices allowed to remain unmatched (default: all).
    With a partial eligibility mask of odd cardinality one unmatched eligible
    index rides free of the threshold/2 charge (sink-parity leftover); with
    the default all-eligible mask the clean cost model always holds.
    """
    n = matrix.n
    if n < 1:
        raise ValidationError("matching needs at least 1 index")
    if not np.isinf(threshold) and threshold < 0:
        raise ValidationError("threshold must be non-negative")
    if eligibility is None:
        eligible = np.ones(n, dtype=bool)
    else:
        eligible = np.asarray(eligibility, dtype=bool)
        if eligible.shape != (n,):
            raise ValidationError("eligibility length mismatch")

    ii, jj, dd = _free_edges(matrix)
    relaxed = np.isinf(threshold)

    # Integer scaling shared by distances and the sink price.
    ref = max(float(dd.max()) if dd.size else 0.0,
              0.0 if relaxed else float(threshold), 1e-300)
    scale = float(2 ** _SCALE_BITS) / ref
    d_int = np.rint(dd * scale).astype(np.int64)

    if relaxed:
        edges = list(zip(ii.tolist(), jj.tolist(), d_int.tolist()))
        nv = n
    elif bool(np.all(eligible)):
        # All-eligible fast path: minimizing sum(d) + (t/2) * #unmatched is
        # the same as maximizing sum(t - d) over edges with d <= t, so no
        # sink vertices are needed.  The +2 offset makes boundary ties
        # (d == threshold) strictly worth matching while staying far below
        # the scaled gap between distinct objectives.
        t_int = 2 * int(round(threshold * scale / 2.0))
        keep = d_int <= t_int + 1
        gain = (t_int + 2) - d_int[keep]
        edges = list(zip(ii[keep].tolist(), jj[keep].tolist(),
                         gain.tolist()))
        if not edges:
            return _result(matrix, np.full(n, -1), n)
        mate = max_weight_matching(n, edges, False, False)
        return _result(matrix, mate, n)
    else:
        # Sink price: 2 * sink = t_int + 2, so a pair at exactly the
        # threshold beats two sinks by the +2 tie margin (ties match).
        t_int = 2 * int(round(threshold * scale / 2.0))
        sink = t_int // 2 + 1
        # An edge above the caliper can never beat two sinks, so it is
        # pruned -- unless an endpoint has no sink and may need it.
        keep = (d_int <= t_int + 2) | ~eligible[ii] | ~eligible[jj]
        ii, jj, d_int = ii[keep], jj[keep], d_int[keep]
        edges = list(zip(ii.tolist(), jj.tolist(), d_int.tolist()))
        sinks = []
        nv = n
        for v in range(n):
            if eligible[v]:
                edges.append((v, nv, sink))
                sinks.append(nv)
                nv += 1
        for a in range(len(sinks)):
            for b in range(a + 1, len(sinks)):
                edges.append((sinks[a], sinks[b], 0))

    if not edges:
        return _result(matrix, np.full(nv, -1), n)

    # Minimize cost == maximize (C - cost) among maximum-cardinality matchings.
    C = max(w for _, _, w in edges) + 1
    maxedges = [(i, j, C - w) for i, j, w in edges]
    mate = max_weight_matching(nv, maxedges, True, False)
    return _result(matrix, mate, n)


def brute_force_matching(matrix: DistanceMatrix, threshold: float,
                         eligibility: Optional[Sequence[bool]] = None) -> MatchingResult:
    """Exhaustive oracle with the same contract as caliper_matching.

    Enumerates every partial matching over the free pairs and scores it with
    the sink-construction key: maximum cardinality of the augmented graph
    (real pairs plus sink pairs), then minimal caliper-model objective, then
    fewer unmatched, then the lexicographically smallest pair list.
    Limited to n <= 12.
    """
    n = matrix.n
    if n > 12:
        raise ValidationError("brute force limited to n <= 12")
    if not np.isinf(threshold) and threshold < 0:
        raise ValidationError("threshold must be non-negative")
    if eligibility is None:
        eligible = [True] * n
    else:
        eligible = list(eligibility)

    free = matrix.free_mask()
    partners = [[j for j in range(n) if free[i, j]] for i in range(n)]
    relaxed = bool(np.isinf(threshold))
    half_t = 0.0 if relaxed else threshold / 2.0

    best_key = None
    best_pairs: tuple = ()

    n_elig = sum(1 for e in eligible if e)

    def key_for(pairs: list[tuple[int, int]], unmatched: list[int]):
        cost = sum(matrix.d[i, j] for i, j in pairs)
        n_un = len(unmatched)
        if relaxed:
            # No sinks: max cardinality first, then min distance.
            return (n_un, cost, tuple(sorted(pairs)))
        # Augmented cardinality: unmatched eligible indices take their sinks
        # and leftover sinks pair off among themselves.  When the sink count
        # has odd parity, one unmatched eligible index rides free (the
        # phantom-vertex rule); with all indices eligible the parity is
        # always even and every unmatched index pays threshold/2.
        u_e = sum(1 for v in unmatched if eligible[v])
        card = len(pairs) + (n_elig + u_e) // 2
        u_pay = u_e if (n_elig + u_e) % 2 == 0 else max(u_e - 1, 0)
        objective = cost + half_t * u_pay
        return (-card, objective, u_pay, cost, tuple(sorted(pairs)))

    pairs: list[tuple[int, int]] = []
    unmatched: list[int] = []

    def rec(v: int) -> None:
        nonlocal best_key, best_pairs
        if v == n:
            k = key_for(pairs, unmatched)
            if best_key is None or k < best_key:
                best_key = k
                best_pairs = tuple(sorted(pairs))
            return
        used = {i for p in pairs for i in p}
        if v in used:
            rec(v + 1)
            return
        for j in partners[v]:
            if j > v and j not in used:
                # Above the caliper a pair is only ever worth it for an
                # index that cannot fall back to a sink.
                if (not relaxed and matrix.d[v, j] > threshold
                        and eligible[v] and eligible[j]):
                    continue
                pairs.append((v, j))
                rec(v + 1)
                pairs.pop()
        unmatched.append(v)
        rec(v + 1)
        unmatched.pop()

    rec(0)
    matched = {i for p in best_pairs for i in p}
    un = tuple(v for v in range(n) if v not in matched)
    total = float(sum(matrix.d[i, j] for i, j in best_pairs))
    return MatchingResult(pairs=best_pairs, unmatched=un, total_cost=total)
