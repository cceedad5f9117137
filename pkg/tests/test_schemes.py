"""Randomization scheme behavior: primitives, drivers, and invariants."""

import math

import numpy as np
import pytest

from matchrand.core import Participant, ValidationError
from matchrand.distance import ThresholdSpec
from matchrand.schemes import (CountingRNG, SchemeConfig, cr_assign,
                               categorize, dabcd_assign, mti_assign,
                               participants_from_matrix, psr_assign,
                               run_scheme, stratified_assign,
                               synthetic_schema)


def rng_(seed=0):
    return np.random.default_rng(seed)


class TestCrAssign:
    def test_reproducible(self):
        a = cr_assign(4, rng_(11))
        b = cr_assign(4, rng_(11))
        assert np.array_equal(a, b)
        assert set(a.tolist()) <= {0, 1}

    def test_empty(self):
        assert cr_assign(0, rng_()).size == 0

    def test_marginal_half(self):
        draws = cr_assign(100_000, rng_(5))
        assert abs(draws.mean() - 0.5) < 0.01


class TestMtiAssign:
    def test_forced_at_boundary(self):
        for seed in range(20):
            arms = mti_assign(1, 4, 4, rng_(seed))
            assert arms.tolist() == [0]
        for seed in range(20):
            arms = mti_assign(1, -4, 4, rng_(seed))
            assert arms.tolist() == [1]

    def test_balanced_start_all_vectors_possible(self):
        seen = set()
        for seed in range(200):
            seen.add(tuple(mti_assign(2, 0, 4, rng_(seed)).tolist()))
        assert seen == {(0, 0), (0, 1), (1, 0), (1, 1)}

    def test_prefix_bound_respected(self):
        # imbalance +3, mti 4, k=6: no accepted vector may push any prefix
        # to +5.
        for seed in range(300):
            arms = mti_assign(6, 3, 4, rng_(seed))
            run = 3
            for w in arms:
                run += 2 * int(w) - 1
                assert abs(run) <= 4

    def test_matches_exhaustive_filter_distribution(self):
        # The accepted set must be exactly the spec's filtered set.
        feasible = set()
        for m in range(64):
            w = [(m >> j) & 1 for j in range(6)]
            run, ok = 3, True
            for x in w:
                run += 2 * x - 1
                if abs(run) > 4:
                    ok = False
                    break
            if ok and abs(sum(2 * x - 1 for x in w)) <= 4:
                feasible.add(tuple(w))
        seen = {tuple(mti_assign(6, 3, 4, rng_(s)).tolist())
                for s in range(3000)}
        assert seen == feasible

    def test_validation(self):
        with pytest.raises(ValidationError):
            mti_assign(0, 0, 4, rng_())
        with pytest.raises(ValidationError):
            mti_assign(2, 6, 4, rng_())


SCHEMA2 = synthetic_schema(2)


def batches_for(X, sizes):
    return participants_from_matrix(np.asarray(X, dtype=float), sizes)


def smr_config(**kw):
    base = dict(variant="SMR",
                threshold=ThresholdSpec(kind="dynamic"), mti=4)
    base.update(kw)
    return SchemeConfig(**base)


def random_batches(rng, n, p=2, max_batch=4):
    X = rng.normal(size=(n, p))
    sizes = []
    left = n
    while left > 0:
        s = min(int(rng.integers(1, max_batch + 1)), left)
        sizes.append(s)
        left -= s
    return batches_for(X, sizes)


def nonpair_running_imbalance(seq):
    """Prefix imbalances of the non-pair (MTI-drawn) assignments."""
    return seq.mti_tracked_imbalance()


class TestRunSchemeBasics:
    def test_cr_equivalent_to_concatenation(self):
        batches = random_batches(rng_(1), 10)
        seq = run_scheme(batches, SchemeConfig(variant="CR"), 42, SCHEMA2)
        flat = cr_assign(10, CountingRNG(np.random.default_rng(42)))
        assert np.array_equal(seq.W, flat)

    def test_same_seed_identical(self):
        batches = random_batches(rng_(2), 24)
        for variant in ("CR", "MR", "SMR", "SRR", "PSR", "DABCD"):
            cfg = smr_config(variant=variant) if variant in ("SMR", "SRR") \
                else SchemeConfig(variant=variant)
            a = run_scheme(batches, cfg, 7, SCHEMA2)
            b = run_scheme(batches, cfg, 7, SCHEMA2)
            assert np.array_equal(a.W, b.W), variant
            assert a.mechanisms == b.mechanisms
            assert a.match_state.pairs == b.match_state.pairs

    def test_mr_beats_smr_on_matched_distance(self):
        from matchrand.distance import covariance_pinv, mahalanobis_sq
        rng = rng_(3)
        wins = 0
        for rep in range(10):
            batches = random_batches(rng, 20)
            X = np.vstack([p.encoded for b in batches for p in b])
            parts = {p.id: p for b in batches for p in b}
            s_pinv = covariance_pinv(X)

            def matched_sum(seq):
                return sum(mahalanobis_sq(parts[a].encoded,
                                          parts[b].encoded, s_pinv)
                           for a, b in map(tuple, seq.match_state.pairs))

            mr = run_scheme(batches, SchemeConfig(variant="MR"), rep, SCHEMA2)
            smr = run_scheme(batches,
                             smr_config(threshold=ThresholdSpec(
                                 kind="fixed", q=0.99)),
                             rep, SCHEMA2)
            # MR pairs everyone optimally; compare over full pairings only.
            if len(smr.match_state.pairs) == len(mr.match_state.pairs):
                assert matched_sum(mr) <= matched_sum(smr) + 1e-9
                wins += 1
        assert wins >= 1

    def test_csv_export(self):
        batches = random_batches(rng_(4), 6)
        seq = run_scheme(batches, SchemeConfig(variant="CR"), 0, SCHEMA2)
        text = seq.to_csv()
        assert text.startswith("id,arm,mechanism,batch")
        assert len(text.strip().splitlines()) == 7


class TestMatchedFamilies:
    def test_pairs_complementary_smr_srr(self):
        for variant in ("SMR", "SRR"):
            for seed in range(30):
                batches = random_batches(rng_(seed + 100), 30)
                seq = run_scheme(batches, smr_config(variant=variant),
                                 seed, SCHEMA2)
                arm = dict(zip(seq.ids, seq.W))
                for pair in seq.match_state.pairs:
                    a, b = tuple(pair)
                    assert arm[a] + arm[b] == 1

    def test_mti_prefix_bound(self):
        for variant in ("SMR", "SRR"):
            for seed in range(30):
                batches = random_batches(rng_(seed + 200), 40)
                seq = run_scheme(batches, smr_config(variant=variant),
                                 seed, SCHEMA2)
                assert max(map(abs, nonpair_running_imbalance(seq))) <= 4

    def test_srr_arms_never_change(self):
        # Run SRR batch by batch and snapshot arms between batches.
        rng = rng_(9)
        batches = random_batches(rng, 30)
        prefix_arms = {}
        for upto in range(1, len(batches) + 1):
            seq = run_scheme(batches[:upto], smr_config(variant="SRR"),
                             13, SCHEMA2,
                             planned_N=sum(len(b) for b in batches))
            for pid, w in zip(seq.ids, seq.W):
                if pid in prefix_arms:
                    assert prefix_arms[pid] == w
                prefix_arms[pid] = w

    def test_relaxed_dynamic_matches_everyone(self):
        # Once reservoir+batch >= remaining, the threshold relaxes and the
        # final state has at most one unmatched participant per parity.
        batches = random_batches(rng_(10), 21, max_batch=3)
        seq = run_scheme(batches, smr_config(variant="SRR"), 3, SCHEMA2)
        assert len(seq.match_state.reservoir) <= 1 + 4  # warmup leftovers

    def test_warmup_goes_to_reservoir(self):
        X = rng_(11).normal(size=(4, 2))
        seq = run_scheme(batches_for(X, [4]), smr_config(), 1, SCHEMA2)
        # p + 2 = 4: the whole first batch is warmup.
        assert seq.match_state.pairs == set()
        assert len(seq.match_state.reservoir) == 4
        assert all(m in ("cr_mti", "forced_mti") for m in seq.mechanisms)

    def test_degeneration_block_two(self):
        # Threshold forced to infinity with batch size 2: every batch is a
        # complementary block after warmup.
        for seed in range(50):
            X = rng_(seed).normal(size=(12, 1))
            cfg = SchemeConfig(variant="SMR",
                               threshold=ThresholdSpec(kind="relaxed"),
                               mti=4, reservoir_warmup=0)
            seq = run_scheme(batches_for(X, [2] * 6), cfg, seed,
                             synthetic_schema(1))
            for b in range(6):
                assert int(seq.W[2 * b]) + int(seq.W[2 * b + 1]) == 1

    def test_fully_sequential_replay(self):
        # Hand-simulated matching-on-the-fly on a crafted 6-person stream
        # (1-d covariates, fixed empirical threshold, no MTI).
        # Warmup 3 fills the reservoir with x = 0, 10, 20; entrant 4 at
        # x=0.1 matches participant 1; entrant 5 at x=200 joins the
        # reservoir (nearest D^2 4.33 vs threshold 0.02); entrant 6 at
        # x=19.9 matches participant 3 (D^2 ~ 0 vs threshold 0.017).
        X = np.array([[0.0], [10.0], [20.0], [0.1], [200.0], [19.9]])
        cfg = SchemeConfig(variant="SMR",
                           threshold=ThresholdSpec(kind="fixed", q=0.05),
                           mti=None, reservoir_warmup=3)
        seq = run_scheme(batches_for(X, [1] * 6), cfg, 21,
                         synthetic_schema(1))
        pairs = {tuple(sorted(p)) for p in seq.match_state.pairs}
        assert ("p00001", "p00004") in pairs
        assert ("p00003", "p00006") in pairs
        assert "p00005" in seq.match_state.reservoir
        arm = dict(zip(seq.ids, seq.W))
        assert arm["p00004"] == 1 - arm["p00001"]
        assert arm["p00006"] == 1 - arm["p00003"]

    def test_srr_rematch_breaks_pair(self):
        # Prior pair (a, b) far apart; new entrant lands on a; SRR breaks
        # the pair, a re-pairs with the entrant, b returns to the
        # reservoir, and the entrant takes a's complement.
        X_first = np.array([[0.0], [8.0], [50.0], [-50.0]])
        X_new = np.array([[0.05]])
        cfg = SchemeConfig(variant="SRR",
                           threshold=ThresholdSpec(kind="fixed", q=0.3),
                           mti=4, reservoir_warmup=0)
        all_batches = batches_for(np.vstack([X_first, X_new]), [4, 1])
        seq = run_scheme(all_batches, cfg, 2, synthetic_schema(1))
        pairs = {tuple(sorted(p)) for p in seq.match_state.pairs}
        arm = dict(zip(seq.ids, seq.W))
        if ("p00001", "p00005") in pairs:
            assert arm["p00005"] == 1 - arm["p00001"]

    def test_all_above_threshold_no_pairs(self):
        X = np.array([[0.0], [100.0], [250.0], [500.0], [-800.0], [1500.0]])
        cfg = SchemeConfig(variant="SMR",
                           threshold=ThresholdSpec(kind="fixed", q=0.01),
                           mti=4, reservoir_warmup=3)
        seq = run_scheme(batches_for(X, [1] * 6), cfg, 5,
                         synthetic_schema(1))
        assert seq.match_state.pairs == set()

    def test_mr_small_cases(self):
        X = rng_(12).normal(size=(5, 2))
        seq = run_scheme(batches_for(X, [5]), SchemeConfig(variant="MR"),
                         1, SCHEMA2)
        assert len(seq.match_state.pairs) == 2
        assert len(seq.match_state.reservoir) == 1
        seq2 = run_scheme(batches_for(X[:2], [2]),
                          SchemeConfig(variant="MR"), 1, SCHEMA2)
        assert len(seq2.match_state.pairs) == 1
        assert seq2.W.sum() == 1


class TestMarginalFairness:
    @pytest.mark.slow
    def test_half_probability_per_participant(self):
        n, reps = 12, 4000
        batches = random_batches(rng_(77), n)
        for variant in ("CR", "MR", "SMR", "SRR"):
            cfg = smr_config(variant=variant) if variant in ("SMR", "SRR") \
                else SchemeConfig(variant=variant)
            counts = np.zeros(n)
            for rep in range(reps):
                counts += run_scheme(batches, cfg, rep, SCHEMA2).W
            se = math.sqrt(0.25 / reps)
            assert np.all(np.abs(counts / reps - 0.5) < 3.5 * se), variant


class TestStratified:
    STRATA = {"x1": (7.0, 8.0)}

    def make(self, value, pid="s1"):
        return Participant(id=pid, enroll_index=1, batch_index=1,
                           raw={"x1": value}, encoded=np.array([value]))

    def test_categorize_cutpoints(self):
        assert categorize(6.5, (7.0, 8.0)) == 0
        assert categorize(7.4, (7.0, 8.0)) == 1
        assert categorize(9.0, (7.0, 8.0)) == 2
        assert categorize(7.0, (7.0, 8.0)) == 1  # boundary joins upper bin

    def test_block_of_two(self):
        blocks = {}
        first = stratified_assign(self.make(7.4, "a"), self.STRATA, blocks,
                                  rng_(1))
        second = stratified_assign(self.make(7.9, "b"), self.STRATA, blocks,
                                   rng_(2))
        assert second == 1 - first
        # Different stratum starts its own block.
        third = stratified_assign(self.make(6.0, "c"), self.STRATA, blocks,
                                  rng_(3))
        assert third in (0, 1)

    def test_missing_value_rejected(self):
        with pytest.raises(ValidationError):
            stratified_assign(self.make(None), self.STRATA, {}, rng_())

    def test_run_scheme_strat_blocks(self):
        X = rng_(13).normal(loc=7.5, scale=1.0, size=(20, 1))
        cfg = SchemeConfig(variant="STRAT", strata_def={"x1": (7.0, 8.0)})
        batches = participants_from_matrix(X, [20])
        seq = run_scheme(batches, cfg, 3, synthetic_schema(1))
        # Within each stratum, consecutive entrants alternate in blocks.
        by_stratum = {}
        for pid, w, part in zip(seq.ids, seq.W,
                                [p for b in batches for p in b]):
            key = categorize(part.raw["x1"], (7.0, 8.0))
            by_stratum.setdefault(key, []).append(int(w))
        for arms in by_stratum.values():
            for i in range(0, len(arms) - 1, 2):
                assert arms[i] + arms[i + 1] == 1


class TestPSR:
    def test_first_pair_complementary(self):
        X = rng_(14).normal(size=(2, 2))
        parts = [p for b in batches_for(X, [2]) for p in b]
        w1, w2 = psr_assign((parts[0], parts[1]), np.empty((0, 2)),
                            np.array([], dtype=int), X, 0.75, rng_(0))
        assert w1 + w2 == 1

    def test_biased_coin_rate(self):
        # Stream 0, 1, 0, 1 (1-d): the balancing option for the second pair
        # puts one "1" in each arm; it must win ~75% of the time.
        X = np.array([[0.0], [1.0], [0.0], [1.0]])
        batches = batches_for(X, [4])
        cfg = SchemeConfig(variant="PSR")
        balanced = 0
        reps = 2000
        for rep in range(reps):
            seq = run_scheme(batches, cfg, rep, synthetic_schema(1))
            # Balanced: the two x=1 participants are in different arms.
            if int(seq.W[1]) + int(seq.W[3]) == 1:
                balanced += 1
        assert abs(balanced / reps - 0.75) < 0.035

    def test_tied_options_fair_coin(self):
        # Identical covariates in the incoming pair: both complementary
        # options give the same imbalance, so the draw is a fair coin.
        X = np.array([[0.0], [1.0], [1.0], [1.0]])
        batches = batches_for(X, [4])
        cfg = SchemeConfig(variant="PSR")
        reps = 2000
        ones = sum(int(run_scheme(batches, cfg, rep, synthetic_schema(1)).W[2])
                   for rep in range(reps))
        assert abs(ones / reps - 0.5) < 0.035

    def test_odd_leftover_cr(self):
        X = rng_(15).normal(size=(5, 2))
        seq = run_scheme(batches_for(X, [3, 2]),
                         SchemeConfig(variant="PSR"), 1, SCHEMA2)
        assert seq.mechanisms[-1] == "cr_mti"
        assert seq.mechanisms[0] == "block"


class TestDABCD:
    def test_warmup_blocks(self):
        X = rng_(16).normal(size=(4, 2))
        seq = run_scheme(batches_for(X, [4]), SchemeConfig(variant="DABCD"),
                         1, SCHEMA2)
        assert int(seq.W[0]) + int(seq.W[1]) == 1
        assert int(seq.W[2]) + int(seq.W[3]) == 1
        assert all(m == "block" for m in seq.mechanisms)

    def test_centroid_tie_fair(self):
        # Mirror-symmetric history (swapping the coordinate axes exchanges
        # the two arms), new participant at the centroid: the candidate
        # variances tie exactly -> fair coin.
        X = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        arms = np.array([0, 0, 1, 1])
        newp = Participant(id="n", enroll_index=5, batch_index=2, raw={},
                           encoded=np.zeros(2))
        picks = [dabcd_assign(newp, X, arms, 0.75, rng_(s))
                 for s in range(400)]
        assert abs(np.mean(picks) - 0.5) < 0.1

    def test_lagging_arm_preferred(self):
        # Centered covariates, imbalance +2: assigning 0 lowers the
        # treatment-coefficient variance, so arm 0 wins ~75% of draws.
        X = np.array([[1.0], [-1.0], [0.5], [-0.5], [0.2], [-0.2]])
        arms = np.array([1, 1, 1, 1, 0, 0])
        newp = Participant(id="n", enroll_index=7, batch_index=2, raw={},
                           encoded=np.array([0.0]))
        picks = [dabcd_assign(newp, X, arms, 0.75, rng_(s))
                 for s in range(2000)]
        rate0 = 1 - np.mean(picks)
        assert abs(rate0 - 0.75) < 0.04


class TestConfigValidation:
    def test_bad_variant(self):
        with pytest.raises(ValidationError):
            SchemeConfig(variant="URN")

    def test_bad_coin(self):
        with pytest.raises(ValidationError):
            SchemeConfig(variant="CR", coin=0.5)
        with pytest.raises(ValidationError):
            SchemeConfig(variant="CR", coin=1.2)

    def test_smr_needs_threshold(self):
        with pytest.raises(ValidationError):
            SchemeConfig(variant="SMR", mti=4)

    def test_strat_needs_strata(self):
        with pytest.raises(ValidationError):
            SchemeConfig(variant="STRAT")

    def test_bad_mti(self):
        with pytest.raises(ValidationError):
            SchemeConfig(variant="CR", mti=0)
