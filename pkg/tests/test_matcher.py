"""Matching solver vs the exhaustive oracle, plus frozen small instances."""

import math

import numpy as np
import pytest

from matchrand.core import ValidationError
from matchrand.distance import BIG, DistanceMatrix
from matchrand.matcher import (MatchingResult, brute_force_matching,
                               caliper_matching, min_weight_matching)


def mat(n, entries):
    """Distance matrix from {(i, j): d} over 0-based indices."""
    d = np.zeros((n, n))
    for (i, j), v in entries.items():
        d[i, j] = d[j, i] = v
    return DistanceMatrix(d=d)


FOUR = {(0, 1): 1, (2, 3): 1, (0, 2): 2, (0, 3): 10, (1, 2): 10, (1, 3): 2}


class TestMinWeight:
    def test_four_vertex(self):
        res = min_weight_matching(mat(4, FOUR))
        assert res.pair_set == {frozenset({0, 1}), frozenset({2, 3})}
        assert res.total_cost == 2
        assert res.unmatched == ()

    def test_forbidden_edge_reroutes(self):
        entries = dict(FOUR)
        entries[(0, 1)] = BIG
        res = min_weight_matching(mat(4, entries))
        assert res.pair_set == {frozenset({0, 2}), frozenset({1, 3})}
        assert res.total_cost == 4

    def test_odd_instance_leaves_one_out(self):
        res = min_weight_matching(mat(3, {(0, 1): 1, (0, 2): 5, (1, 2): 5}))
        assert res.pair_set == {frozenset({0, 1})}
        assert res.unmatched == (2,)
        assert res.total_cost == 1

    def test_odd_n_always_one_unmatched(self):
        rng = np.random.default_rng(7)
        for n in (3, 5, 7, 9):
            d = rng.integers(1, 100, size=(n, n)).astype(float)
            d = np.triu(d, 1)
            res = min_weight_matching(DistanceMatrix(d=d + d.T))
            assert len(res.unmatched) == 1

    def test_fully_forbidden_pair(self):
        res = min_weight_matching(mat(2, {(0, 1): np.inf}))
        assert res.pairs == ()
        assert set(res.unmatched) == {0, 1}


class TestCaliper:
    def test_two_above_threshold(self):
        res = caliper_matching(mat(2, {(0, 1): 5}), 4.0)
        assert res.pairs == ()
        assert set(res.unmatched) == {0, 1}

    def test_two_relaxed(self):
        res = caliper_matching(mat(2, {(0, 1): 5}), math.inf)
        assert res.pair_set == {frozenset({0, 1})}

    def test_four_with_caliper(self):
        res = caliper_matching(mat(4, FOUR), 1.5)
        assert res.pair_set == {frozenset({0, 1}), frozenset({2, 3})}
        assert res.total_cost == 2

    def test_boundary_tie_is_matched(self):
        res = caliper_matching(mat(2, {(0, 1): 4.0}), 4.0)
        assert res.pair_set == {frozenset({0, 1})}

    def test_just_above_boundary_is_not(self):
        res = caliper_matching(mat(2, {(0, 1): 4.0 + 1e-9}), 4.0)
        assert res.pairs == ()

    def test_forbidden_only_edge_unmatched(self):
        res = caliper_matching(mat(2, {(0, 1): BIG}), 1e15)
        assert res.pairs == ()

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValidationError):
            caliper_matching(mat(2, {(0, 1): 1}), -1.0)

    def test_ineligible_partner_cheap_pair_forms(self):
        # Index 1 has no sink; pairing at d below the caliper is taken.
        res = caliper_matching(mat(2, {(0, 1): 0.5}), 1.0,
                               eligibility=[True, False])
        assert res.pair_set == {frozenset({0, 1})}

    def test_ineligible_partner_expensive_pair_skipped(self):
        # Leaving index 0 on its sink is cheaper than a d=5 pair, and the
        # augmented-graph cardinality is the same either way.
        res = caliper_matching(mat(2, {(0, 1): 5}), 1.0,
                               eligibility=[True, False])
        assert res.pairs == ()
        assert set(res.unmatched) == {0, 1}

    def test_result_invariants(self):
        with pytest.raises(ValidationError):
            MatchingResult(pairs=((0, 1), (1, 2)), unmatched=(), total_cost=0)
        with pytest.raises(ValidationError):
            MatchingResult(pairs=((0, 1),), unmatched=(1,), total_cost=0)


def random_instance(rng, n, forbid_prob=0.0):
    # Dyadic weights keep float sums exact for oracle comparison.
    d = rng.integers(1, 4096, size=(n, n)).astype(float) / 1024.0
    d = np.triu(d, 1)
    d = d + d.T
    if forbid_prob:
        iu = np.triu_indices(n, 1)
        drop = rng.random(len(iu[0])) < forbid_prob
        d[iu[0][drop], iu[1][drop]] = np.inf
        d[iu[1][drop], iu[0][drop]] = np.inf
    return DistanceMatrix(d=d)


class TestOracleEquality:
    @pytest.mark.parametrize("n", [4, 6, 8, 10])
    def test_min_weight_equals_oracle(self, n):
        rng = np.random.default_rng(100 + n)
        for rep in range(120):
            m = random_instance(rng, n, forbid_prob=0.15 if rep % 2 else 0.0)
            fast = min_weight_matching(m)
            slow = brute_force_matching(m, math.inf)
            assert fast.total_cost == slow.total_cost
            assert len(fast.pairs) == len(slow.pairs)

    @pytest.mark.parametrize("n", [4, 6, 8, 10])
    def test_caliper_equals_oracle(self, n):
        rng = np.random.default_rng(200 + n)
        for rep in range(120):
            m = random_instance(rng, n, forbid_prob=0.15 if rep % 3 == 0 else 0.0)
            t = float(rng.integers(1, 4096)) / 1024.0
            fast = caliper_matching(m, t)
            slow = brute_force_matching(m, t)
            n_un = len(fast.unmatched)
            assert fast.total_cost + t / 2 * n_un == \
                slow.total_cost + t / 2 * len(slow.unmatched)
            assert all(m.d[i, j] <= t for i, j in fast.pairs)

    def test_caliper_with_eligibility(self):
        rng = np.random.default_rng(321)
        for _ in range(200):
            n = int(rng.integers(2, 9))
            m = random_instance(rng, n)
            t = float(rng.integers(1, 4096)) / 1024.0
            elig = rng.random(n) < 0.7
            fast = caliper_matching(m, t, eligibility=elig)
            slow = brute_force_matching(m, t, eligibility=elig)
            k = int(np.count_nonzero(elig))

            def key(res):
                u_e = sum(1 for v in res.unmatched if elig[v])
                card = len(res.pairs) + (k + u_e) // 2
                u_pay = u_e if (k + u_e) % 2 == 0 else max(u_e - 1, 0)
                return (card, res.total_cost + t / 2 * u_pay)

            card_f, obj_f = key(fast)
            card_s, obj_s = key(slow)
            assert card_f == card_s
            assert obj_f == obj_s

    def test_odd_sizes(self):
        rng = np.random.default_rng(55)
        for n in (3, 5, 7, 9):
            for _ in range(60):
                m = random_instance(rng, n)
                t = float(rng.integers(1, 4096)) / 1024.0
                fast = caliper_matching(m, t)
                slow = brute_force_matching(m, t)
                assert fast.total_cost + t / 2 * len(fast.unmatched) == \
                    slow.total_cost + t / 2 * len(slow.unmatched)

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(77)
        for _ in range(80):
            m = random_instance(rng, 8)
            t1 = float(rng.integers(1, 2048)) / 1024.0
            t2 = t1 + float(rng.integers(1, 2048)) / 1024.0
            r1 = caliper_matching(m, t1)
            r2 = caliper_matching(m, t2)
            assert len(r2.unmatched) <= len(r1.unmatched)

    def test_brute_force_size_cap(self):
        with pytest.raises(ValidationError):
            brute_force_matching(random_instance(np.random.default_rng(0), 13),
                                 math.inf)


class TestScale:
    def test_large_dense_instance_runs(self):
        rng = np.random.default_rng(9)
        n = 200
        d = rng.random((n, n)) * 50
        d = np.triu(d, 1)
        m = DistanceMatrix(d=d + d.T)
        res = caliper_matching(m, 5.0)
        assert all(m.d[i, j] <= 5.0 for i, j in res.pairs)
        assert len(res.pairs) * 2 + len(res.unmatched) == n
