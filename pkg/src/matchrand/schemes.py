"""Randomization schemes behind one driver interface.

Variants: complete randomization (CR), matched randomization (MR),
sequential matched randomization (SMR, batched, fixed or dynamic threshold),
sequential rematched randomization (SRR), stratified permuted blocks
(STRAT), pairwise sequential randomization (PSR), and Atkinson's biased-coin
design (DABCD).  Every variant runs through ``run_scheme`` so simulation and
the live service share one code path.

Imbalance bookkeeping (Big Stick / MTI): the running imbalance tracked
against the MTI counts only assignments drawn by the MTI filter (warmup and
unmatched participants).  A matched pair nets zero; when both members of a
pair are new, its randomly drawn first arm counts as a momentary +-1 inside
the batch prefix check and is cancelled at the partner's position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (Assignment, CovariateSchema, InsufficientDataError,
                   MatchState, Participant, TrialState, ValidationError)
from .distance import (RELAXED, ThresholdSpec, DistanceMatrix,
                       ReferenceDistribution, covariance_pinv,
                       dynamic_quantile, empirical_reference,
                       mahalanobis_sq, mahalanobis_sq_matrix, quantile)
from .matcher import caliper_matching, min_weight_matching

VARIANTS = ("CR", "MR", "SMR", "SRR", "STRAT", "PSR", "DABCD")

_ENUM_MAX = 20  # exhaustive candidate screening up to 2^20 vectors
_REJECT_ATTEMPTS = 10_000


class CountingRNG:
    """numpy Generator wrapper recording how many draw calls were made."""

    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self.calls = 0

    def __getattr__(self, name):
        if name.startswith("_"):  # never proxy internals or dunders
            raise AttributeError(name)
        attr = getattr(self._rng, name)
        if callable(attr):
            def counted(*args, **kwargs):
                self.calls += 1
                return attr(*args, **kwargs)
            return counted
        return attr

    def __deepcopy__(self, memo):
        import copy as _copy
        clone = CountingRNG(_copy.deepcopy(self._rng, memo))
        clone.calls = self.calls
        return clone


@dataclass(frozen=True)
class SchemeConfig:
    variant: str
    threshold: Optional[ThresholdSpec] = None
    mti: Optional[int] = None
    coin: float = 0.75
    strata_def: Optional[dict] = None
    reservoir_warmup: Optional[int] = None  # default p + 2 at run time
    n_boot: int = 200
    allow_reservoir_pairs: bool = False

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown scheme variant {self.variant!r}")
        if not (0.5 < self.coin <= 1.0):
            raise ValidationError("coin must lie in (0.5, 1]")
        if self.mti is not None and self.mti < 1:
            raise ValidationError("mti must be >= 1 when present")
        if self.variant in ("SMR", "SRR") and self.threshold is None:
            raise ValidationError(f"{self.variant} requires a ThresholdSpec")
        if self.variant == "STRAT" and not self.strata_def:
            raise ValidationError("STRAT requires strata_def")
        if self.n_boot < 1:
            raise ValidationError("n_boot must be >= 1")

    def warmup(self, p: int) -> int:
        return self.reservoir_warmup if self.reservoir_warmup is not None \
            else p + 2


@dataclass
class RandSequence:
    ids: list[str]
    W: np.ndarray
    mechanisms: list[str]
    batches: list[int]
    match_state: MatchState
    # True where the arm was decided as part of a complementary pair (either
    # half); such assignments net zero in the Big Stick imbalance.
    paired_at_decision: Optional[list[bool]] = None
    rng_calls: int = 0

    def __post_init__(self) -> None:
        if self.paired_at_decision is None:
            self.paired_at_decision = [False] * len(self.ids)
        if not (len(self.ids) == len(self.W) == len(self.mechanisms)
                == len(self.batches) == len(self.paired_at_decision)):
            raise ValidationError("RandSequence field lengths differ")

    def mti_tracked_imbalance(self) -> list[int]:
        """Running imbalance of the non-pair (MTI-drawn) assignments."""
        run, out = 0, []
        for w, paired in zip(self.W, self.paired_at_decision):
            if not paired:
                run += 2 * int(w) - 1
            out.append(run)
        return out

    def to_csv(self) -> str:
        lines = ["id,arm,mechanism,batch"]
        for i, pid in enumerate(self.ids):
            lines.append(f"{pid},{int(self.W[i])},{self.mechanisms[i]},"
                         f"{self.batches[i]}")
        return "\n".join(lines) + "\n"


def cr_assign(k: int, rng) -> np.ndarray:
    """k independent fair Bernoulli arms."""
    if k < 0:
        raise ValidationError("k must be >= 0")
    if k == 0:
        return np.zeros(0, dtype=int)
    return np.asarray(rng.integers(0, 2, size=k), dtype=int)


def _candidate_matrix(k: int) -> np.ndarray:
    """All 2^k binary vectors, one per row."""
    idx = np.arange(2 ** k, dtype=np.int64)
    return ((idx[:, None] >> np.arange(k)) & 1).astype(np.int8)


def _screen(cands: np.ndarray, contrib_sign: np.ndarray,
            cancel_at: np.ndarray, imbalance_before: int,
            mti: int) -> tuple[np.ndarray, np.ndarray]:
    """Feasibility masks over candidate arm vectors.

    ``contrib_sign`` maps each slot to +1 (permanent) or 0 (momentary pair
    draw); ``cancel_at`` gives, for momentary slots, the scan position where
    the +-1 is removed (its in-batch partner), else -1.  Returns
    (prefix_ok, batch_imbalance) where batch_imbalance sums permanent slots.
    """
    m, k = cands.shape
    steps = (2 * cands - 1).astype(np.int64)
    # Scan positions: slot j contributes at column j; momentary slots also
    # contribute the opposite sign at column cancel_at[j].  Both the
    # momentary-inclusive running value and the permanent-only running value
    # must stay inside the MTI (a momentary +-1 must not mask a violation
    # that survives the batch).
    width = k + 1
    delta = np.zeros((m, width), dtype=np.int64)
    perm_delta = np.zeros((m, k), dtype=np.int64)
    for j in range(k):
        delta[:, j] += steps[:, j]
        if contrib_sign[j] == 0:
            delta[:, cancel_at[j]] -= steps[:, j]
        else:
            perm_delta[:, j] = steps[:, j]
    running = imbalance_before + np.cumsum(delta, axis=1)
    running_perm = imbalance_before + np.cumsum(perm_delta, axis=1)
    prefix_ok = (np.all(np.abs(running[:, :k]) <= mti, axis=1)
                 & np.all(np.abs(running_perm) <= mti, axis=1))
    perm = contrib_sign.astype(np.int64)
    batch_imb = steps @ perm
    return prefix_ok, batch_imb


def _constrained_draw(k: int, imbalance_before: int, mti: int, rng,
                      contrib_sign: Optional[np.ndarray] = None,
                      cancel_at: Optional[np.ndarray] = None
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Uniform draw over MTI-feasible arm vectors; returns (arms, forced).

    Feasible = running imbalance within mti at every prefix AND permanent
    within-batch imbalance within mti.  When no vector satisfies both, the
    fallback keeps the prefix bound and minimizes within-batch imbalance,
    ties uniform.  ``forced`` flags positions where every vector in the
    selection set agrees.
    """
    if contrib_sign is None:
        contrib_sign = np.ones(k, dtype=int)
    if cancel_at is None:
        cancel_at = np.full(k, -1, dtype=int)
    if k == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=bool)
    if abs(imbalance_before) > mti:
        raise ValidationError("imbalance already exceeds the MTI")

    if k <= _ENUM_MAX:
        cands = _candidate_matrix(k)
        prefix_ok, batch_imb = _screen(cands, contrib_sign, cancel_at,
                                       imbalance_before, mti)
        both = prefix_ok & (np.abs(batch_imb) <= mti)
        if np.any(both):
            pool = cands[both]
        else:
            # Internal invariant: alternating signs always satisfy the
            # prefix bound, so the prefix-feasible set is never empty.
            feas = cands[prefix_ok]
            imbs = np.abs(batch_imb[prefix_ok])
            pool = feas[imbs == imbs.min()]
        pick = pool[int(rng.integers(0, len(pool)))]
        forced = np.all(pool == pool[0], axis=0)
        return pick.astype(int), forced
    # Large batches: rejection sampling, then a greedy fallback.
    for _ in range(_REJECT_ATTEMPTS):
        cand = np.asarray(rng.integers(0, 2, size=k), dtype=np.int8)
        prefix_ok, batch_imb = _screen(cand[None, :], contrib_sign,
                                       cancel_at, imbalance_before, mti)
        if prefix_ok[0] and abs(int(batch_imb[0])) <= mti:
            return cand.astype(int), np.zeros(k, dtype=bool)
    # Greedy: walk the slots keeping both running values near zero.
    arms = np.zeros(k, dtype=int)
    run = imbalance_before
    run_perm = imbalance_before
    batch = 0
    momentary: dict[int, int] = {}
    for j in range(k):
        run -= momentary.pop(j, 0)
        prefer = []
        for w in (0, 1):
            s = 2 * w - 1
            next_perm = run_perm + s * contrib_sign[j]
            if abs(run + s) <= mti and abs(next_perm) <= mti:
                prefer.append((abs(batch + s * contrib_sign[j]),
                               abs(run + s), w))
        prefer.sort()
        if len(prefer) > 1 and prefer[0][:2] == prefer[1][:2]:
            w = int(rng.integers(0, 2))
        else:
            w = prefer[0][2]
        s = 2 * w - 1
        arms[j] = w
        run += s
        if contrib_sign[j]:
            run_perm += s
            batch += s
        else:
            momentary[int(cancel_at[j])] = s
    return arms, np.zeros(k, dtype=bool)


def mti_assign(k: int, overall_imbalance_before: int, mti: int, rng
               ) -> np.ndarray:
    """Big Stick arms: fair draws filtered by the MTI prefix rule.

    Uniform over k-vectors whose running overall imbalance stays within mti
    at every prefix and whose within-batch imbalance is within mti; falls
    back to the minimal within-batch imbalance subject to the prefix bound.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    arms, _ = _constrained_draw(k, overall_imbalance_before, mti, rng)
    return arms


# ---------------------------------------------------------------------------
# Matched randomization family


def _threshold_value(spec: ThresholdSpec, X_all: np.ndarray, s_pinv,
                     U_size: int, R_size: int, n_boot: int, rng
                     ) -> Optional[float]:
    """Resolve the matching threshold on the D^2 scale.

    Returns math.inf when relaxed and None when the quantile is at its
    infimum (no match can be accepted).
    """
    if spec.kind == "relaxed":
        return math.inf
    if spec.kind == "dynamic":
        q = dynamic_quantile(U_size, R_size)
        if q == RELAXED:
            return math.inf
        if q <= 0.0:
            return None
    else:
        q = spec.q
    n = X_all.shape[0]
    if spec.estimation == "F":
        p = X_all.shape[1]
        if n <= p:
            return None  # parametric reference undefined this early
        ref = ReferenceDistribution(mode="parametric", p=p, n=n)
    else:
        full = DistanceMatrix(d=mahalanobis_sq_matrix(X_all, s_pinv), trusted=True)
        try:
            ref = empirical_reference(full, n_boot, rng)
        except InsufficientDataError:
            return None  # too few enrolled to estimate a reference yet
    return quantile(ref, q)


@dataclass
class _Driver:
    """Mutable per-run bookkeeping shared by the batch schemes."""

    state: TrialState
    config: SchemeConfig
    rng: CountingRNG
    imbalance: int = 0  # running MTI-tracked imbalance
    arms: dict = field(default_factory=dict)
    mechanisms: dict = field(default_factory=dict)
    paired: dict = field(default_factory=dict)

    def draw_free(self, k: int, contrib_sign=None, cancel_at=None):
        """MTI-filtered (or plain CR) draw for k random slots."""
        if self.config.mti is None:
            return cr_assign(k, self.rng), np.zeros(k, dtype=bool)
        return _constrained_draw(k, self.imbalance, self.config.mti,
                                 self.rng, contrib_sign, cancel_at)

    def record(self, pid: str, arm: int, mechanism: str, batch: int,
               paired: bool = False) -> None:
        self.arms[pid] = int(arm)
        self.mechanisms[pid] = mechanism
        self.paired[pid] = paired
        self.state.assignments[pid] = Assignment(pid, int(arm), mechanism,
                                                 batch)


def _assign_batch_slots(driver: _Driver, batch: list[Participant],
                        partner: dict, batch_no: int) -> None:
    """Assign arms to one batch given its matching decisions.

    ``partner`` maps a batch member id to its matched partner id (an
    already-assigned participant or another batch member); absent means
    unmatched.  Arms for pairs are complements; free members go through the
    MTI filter; new-new pairs draw one momentary arm.
    """
    order = {p.id: i for i, p in enumerate(batch)}
    slots: list[tuple[int, str, int]] = []  # (batch position, id, cancel pos)
    for i, part in enumerate(batch):
        mate = partner.get(part.id)
        if mate is None:
            slots.append((i, part.id, -1))
        elif mate in order:
            if order[mate] > i:  # draw at the earlier member only
                slots.append((i, part.id, order[mate]))
        # matched to an assigned participant: fully determined, no slot

    contrib = np.array([1 if c < 0 else 0 for _, _, c in slots], dtype=int)
    # Cancellation positions must index the slot scan; map batch positions
    # of partners onto the slot axis (the prefix check walks slots, with a
    # trailing column for pairs cancelled after the last slot).
    slot_pos = {pos: j for j, (pos, _, _) in enumerate(slots)}
    cancel = np.full(len(slots), -1, dtype=int)
    for j, (_, _, c) in enumerate(slots):
        if c >= 0:
            later = [sj for pos, sj in slot_pos.items() if pos > c]
            cancel[j] = min(later) if later else len(slots)
    arms, forced = driver.draw_free(len(slots), contrib, cancel)

    drawn = {}
    for j, (_, pid, c) in enumerate(slots):
        drawn[pid] = int(arms[j])
        if c < 0 and driver.config.mti is not None:
            driver.imbalance += 2 * int(arms[j]) - 1

    for i, part in enumerate(batch):
        mate = partner.get(part.id)
        if mate is None:
            mech = "forced_mti" if (driver.config.mti is not None
                                    and part.id in drawn
                                    and forced[[s[1] for s in slots].index(part.id)]
                                    ) else "cr_mti"
            driver.record(part.id, drawn[part.id], mech, batch_no)
        elif mate in order:
            if order[mate] > i:
                driver.record(part.id, drawn[part.id], "cr_mti", batch_no,
                              paired=True)
            else:
                driver.record(part.id, 1 - driver.arms[mate],
                              "match_complement", batch_no, paired=True)
        else:
            driver.record(part.id, 1 - driver.arms[mate],
                          "match_complement", batch_no, paired=True)


def _warmup_batch(driver: _Driver, batch: list[Participant],
                  batch_no: int) -> None:
    if driver.config.mti is None:
        arms = cr_assign(len(batch), driver.rng)
        forced = np.zeros(len(batch), dtype=bool)
    else:
        arms, forced = driver.draw_free(len(batch))
    for j, part in enumerate(batch):
        if driver.config.mti is not None:
            driver.imbalance += 2 * int(arms[j]) - 1
        mech = "forced_mti" if forced[j] else "cr_mti"
        driver.record(part.id, arms[j], mech, batch_no)
        driver.state.match_state.reservoir.add(part.id)


def smr_randomize_batch(driver: _Driver, batch: list[Participant],
                        batch_no: int) -> None:
    """One SMR step: match the batch against the reservoir, then assign.

    Reservoir members keep their arms; matched entrants get the complement;
    the rest go through the MTI filter and join the reservoir.
    """
    state, config = driver.state, driver.config
    enrolled_before = state.enrolled
    state.participants.extend(batch)
    if enrolled_before < config.warmup(state.schema.p):
        _warmup_batch(driver, batch, batch_no)
        return

    X_all = state.encoded_matrix()
    s_pinv = covariance_pinv(X_all)
    reservoir = sorted(state.match_state.reservoir)
    U_size = len(reservoir) + len(batch)
    R_size = state.remaining()
    thr = _threshold_value(config.threshold, X_all, s_pinv, U_size, R_size,
                           config.n_boot, driver.rng)

    partner: dict[str, str] = {}
    if thr is not None and reservoir:
        pool_ids = reservoir + [p.id for p in batch]
        index = {p.id: i for i, p in enumerate(state.participants)}
        X_pool = X_all[[index[pid] for pid in pool_ids]]
        d = mahalanobis_sq_matrix(X_pool, s_pinv)
        if not config.allow_reservoir_pairs:
            nr = len(reservoir)
            d[:nr, :nr] = np.inf
            np.fill_diagonal(d, 0.0)
        res = caliper_matching(DistanceMatrix(d=d, trusted=True), thr)
        for i, j in res.pairs:
            partner[pool_ids[i]] = pool_ids[j]
            partner[pool_ids[j]] = pool_ids[i]
    elif thr is not None and len(batch) >= 2:
        # Empty reservoir: batch members may still pair with each other.
        X_pool = np.vstack([p.encoded for p in batch])
        d = mahalanobis_sq_matrix(X_pool, s_pinv)
        res = caliper_matching(DistanceMatrix(d=d, trusted=True), thr)
        for i, j in res.pairs:
            partner[batch[i].id] = batch[j].id
            partner[batch[j].id] = batch[i].id

    _assign_batch_slots(driver, batch, partner, batch_no)
    ms = state.match_state
    for part in batch:
        mate = partner.get(part.id)
        if mate is None:
            ms.reservoir.add(part.id)
        else:
            ms.pairs.add(frozenset({part.id, mate}))
            ms.reservoir.discard(mate)
    ms.check(state.assignments)


def srr_randomize_batch(driver: _Driver, batch: list[Participant],
                        batch_no: int) -> None:
    """One SRR step: rematch the whole trial, never changing settled arms.

    Same-arm assigned pairs are forbidden; old pairs may break.  New
    entrants matched to an assigned participant take the complement.
    """
    state, config = driver.state, driver.config
    enrolled_before = state.enrolled
    state.participants.extend(batch)
    if enrolled_before < config.warmup(state.schema.p):
        _warmup_batch(driver, batch, batch_no)
        return

    X_all = state.encoded_matrix()
    s_pinv = covariance_pinv(X_all)
    U_size = len(state.match_state.reservoir) + len(batch)
    R_size = state.remaining()
    thr = _threshold_value(config.threshold, X_all, s_pinv, U_size, R_size,
                           config.n_boot, driver.rng)

    partner: dict[str, str] = {}
    new_pairs: set[frozenset] = set()
    if thr is not None:
        ids = [p.id for p in state.participants]
        d = mahalanobis_sq_matrix(X_all, s_pinv)
        arms_arr = np.array([driver.arms.get(pid, -1) for pid in ids])
        assigned = arms_arr >= 0
        same_arm = (assigned[:, None] & assigned[None, :]
                    & (arms_arr[:, None] == arms_arr[None, :]))
        d[same_arm] = np.inf
        np.fill_diagonal(d, 0.0)
        res = caliper_matching(DistanceMatrix(d=d, trusted=True), thr)
        for i, j in res.pairs:
            new_pairs.add(frozenset({ids[i], ids[j]}))
            partner[ids[i]] = ids[j]
            partner[ids[j]] = ids[i]

    _assign_batch_slots(driver, batch, partner, batch_no)
    ms = state.match_state
    ms.pairs = new_pairs
    matched = {pid for pair in new_pairs for pid in pair}
    ms.reservoir = {pid for pid in driver.arms if pid not in matched}
    ms.check(state.assignments)


def mr_randomize_all(driver: _Driver, participants: list[Participant]
                     ) -> None:
    """Matched randomization: one global optimal pairing, then coin flips."""
    state = driver.state
    state.participants.extend(participants)
    X = state.encoded_matrix()
    if len(participants) < 2:
        for part in participants:
            driver.record(part.id, int(cr_assign(1, driver.rng)[0]),
                          "cr_mti", 1)
        return
    s_pinv = covariance_pinv(X)
    res = min_weight_matching(
        DistanceMatrix(d=mahalanobis_sq_matrix(X, s_pinv), trusted=True))
    ms = state.match_state
    for i, j in res.pairs:
        a, b = participants[i].id, participants[j].id
        w = int(cr_assign(1, driver.rng)[0])
        driver.record(a, w, "cr_mti", 1, paired=True)
        driver.record(b, 1 - w, "match_complement", 1, paired=True)
        ms.pairs.add(frozenset({a, b}))
    for i in res.unmatched:
        pid = participants[i].id
        driver.record(pid, int(cr_assign(1, driver.rng)[0]), "cr_mti", 1)
        ms.reservoir.add(pid)
    ms.check(state.assignments)


# ---------------------------------------------------------------------------
# Comparator schemes


def categorize(value: float, cutpoints: Sequence[float]) -> int:
    """Index of the half-open category [c_k, c_{k+1}) the value falls into."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        raise ValidationError("cannot categorize a missing value")
    return int(np.searchsorted(np.asarray(cutpoints, dtype=float), value,
                               side="right"))


def stratum_key(participant: Participant, strata_def: dict) -> tuple:
    """Cross-classification key from the categorization rules.

    ``strata_def`` maps covariate name to either a cutpoint sequence
    (continuous) or None (use the raw value as its own category).
    """
    key = []
    for name, rule in strata_def.items():
        value = participant.raw.get(name)
        if value is None:
            raise ValidationError(f"missing stratification value {name!r}")
        if rule is None:
            key.append(str(value))
        else:
            key.append(categorize(float(value), rule))
    return tuple(key)


def stratified_assign(participant: Participant, strata_def: dict,
                      block_state: dict, rng) -> int:
    """Within-stratum permuted blocks of two."""
    key = stratum_key(participant, strata_def)
    pending = block_state.get(key)
    if pending is None:
        arm = int(rng.integers(0, 2))
        block_state[key] = arm
        return arm
    del block_state[key]
    return 1 - pending


def _arm_mean_imbalance(X: np.ndarray, arms: np.ndarray, s_pinv) -> float:
    """Squared Mahalanobis distance between arm-wise covariate means."""
    m1 = X[arms == 1].mean(axis=0)
    m0 = X[arms == 0].mean(axis=0)
    return mahalanobis_sq(m1, m0, s_pinv)


def psr_assign(pair: tuple[Participant, Participant],
               assigned_X: np.ndarray, assigned_arms: np.ndarray,
               all_enrolled_X: np.ndarray, coin: float, rng
               ) -> tuple[int, int]:
    """Arms for one incoming pair under pairwise sequential randomization.

    The first pair is a fair coin; later pairs pick the complementary
    option with the smaller between-arm mean Mahalanobis imbalance with
    probability ``coin`` (ties: fair coin).
    """
    first = int(rng.integers(0, 2))
    if assigned_X.shape[0] == 0:
        return first, 1 - first
    s_pinv = covariance_pinv(all_enrolled_X)
    x_a, x_b = pair[0].encoded, pair[1].encoded
    imb = []
    for w in (0, 1):
        X = np.vstack([assigned_X, x_a, x_b])
        arms = np.concatenate([assigned_arms, [w, 1 - w]])
        imb.append(_arm_mean_imbalance(X, arms, s_pinv))
    if imb[0] == imb[1]:
        w = first
    else:
        better = int(np.argmin(imb))
        take_better = rng.random() < coin
        w = better if take_better else 1 - better
    return w, 1 - w


def dabcd_assign(participant: Participant, assigned_X: np.ndarray,
                 assigned_arms: np.ndarray, coin: float, rng) -> int:
    """Atkinson-style biased coin on the treatment-coefficient variance.

    For each candidate arm the design (intercept, covariates, treatment) is
    augmented with the entrant's row and the treatment-coefficient diagonal
    of pinv(X'X) compared; the variance-minimizing arm wins with
    probability ``coin``.
    """
    variances = []
    for w in (0, 1):
        X = np.vstack([assigned_X, participant.encoded])
        arms = np.concatenate([assigned_arms, [w]])
        design = np.column_stack([np.ones(len(arms)), X, arms])
        v = np.linalg.pinv(design.T @ design, hermitian=True)[-1, -1]
        variances.append(float(v))
    if variances[0] == variances[1]:
        return int(rng.integers(0, 2))
    better = int(np.argmin(variances))
    return better if rng.random() < coin else 1 - better


# ---------------------------------------------------------------------------
# Driver


def _run_pairwise(driver: _Driver, batches: list[list[Participant]],
                  assign_pair, assign_single) -> None:
    """Unroll batches into consecutive pairs (PSR-style processing)."""
    stream = [(p, b + 1) for b, batch in enumerate(batches) for p in batch]
    pending: Optional[tuple[Participant, int]] = None
    for part, bno in stream:
        driver.state.participants.append(part)
        if pending is None:
            pending = (part, bno)
            continue
        first, fb = pending
        pending = None
        w1, w2 = assign_pair(first, part)
        driver.record(first.id, w1, "block", fb)
        driver.record(part.id, w2, "block", bno)
    if pending is not None:
        part, bno = pending
        driver.record(part.id, assign_single(part), "cr_mti", bno)


def run_scheme(batches: Sequence[Sequence[Participant]],
               config: SchemeConfig, seed, schema: CovariateSchema,
               planned_N: Optional[int] = None) -> RandSequence:
    """Advance a fresh trial through all batches under one scheme.

    ``seed`` may be an int or a numpy SeedSequence; identical seed and
    inputs give an identical RandSequence.
    """
    batches = [list(b) for b in batches]
    if any(not b for b in batches):
        raise ValidationError("empty batch")
    total = sum(len(b) for b in batches)
    state = TrialState(schema=schema,
                       planned_N=planned_N if planned_N is not None else total,
                       scheme_config=config)
    rng = CountingRNG(np.random.default_rng(seed))
    driver = _Driver(state=state, config=config, rng=rng)

    if config.variant == "CR":
        for bno, batch in enumerate(batches, start=1):
            state.participants.extend(batch)
            arms = cr_assign(len(batch), rng)
            for j, part in enumerate(batch):
                driver.record(part.id, arms[j], "cr_mti", bno)
    elif config.variant == "MR":
        mr_randomize_all(driver, [p for b in batches for p in b])
    elif config.variant == "SMR":
        for bno, batch in enumerate(batches, start=1):
            smr_randomize_batch(driver, batch, bno)
    elif config.variant == "SRR":
        for bno, batch in enumerate(batches, start=1):
            srr_randomize_batch(driver, batch, bno)
    elif config.variant == "STRAT":
        blocks: dict = {}
        for bno, batch in enumerate(batches, start=1):
            for part in batch:
                state.participants.append(part)
                arm = stratified_assign(part, config.strata_def, blocks, rng)
                driver.record(part.id, arm, "block", bno)
    elif config.variant == "PSR":
        def pair_fn(a, b):
            done = [p for p in state.participants[:-2]
                    if p.id in driver.arms]
            aX = (np.vstack([p.encoded for p in done])
                  if done else np.empty((0, schema.p)))
            aw = np.array([driver.arms[p.id] for p in done], dtype=int)
            allX = np.vstack([p.encoded for p in state.participants])
            return psr_assign((a, b), aX, aw, allX, config.coin, rng)

        _run_pairwise(driver, batches, pair_fn,
                      lambda p: int(cr_assign(1, rng)[0]))
    elif config.variant == "DABCD":
        warmup = config.warmup(schema.p)
        pending_block: Optional[int] = None
        count = 0
        for bno, batch in enumerate(batches, start=1):
            for part in batch:
                state.participants.append(part)
                if count < warmup:
                    if pending_block is None:
                        arm = int(rng.integers(0, 2))
                        pending_block = arm
                    else:
                        arm = 1 - pending_block
                        pending_block = None
                    driver.record(part.id, arm, "block", bno)
                else:
                    done = state.participants[:-1]
                    aX = np.vstack([p.encoded for p in done])
                    aw = np.array([driver.arms[p.id] for p in done],
                                  dtype=int)
                    arm = dabcd_assign(part, aX, aw, config.coin, rng)
                    driver.record(part.id, arm, "cr_mti", bno)
                count += 1

    ids = [p.id for p in state.participants]
    W = np.array([driver.arms[pid] for pid in ids], dtype=int)
    mechanisms = [driver.mechanisms[pid] for pid in ids]
    batch_of = {p.id: p.batch_index for b in batches for p in b}
    batches_out = [batch_of.get(pid, 1) for pid in ids]
    return RandSequence(ids=ids, W=W, mechanisms=mechanisms,
                        batches=batches_out,
                        match_state=state.match_state,
                        paired_at_decision=[driver.paired[pid]
                                            for pid in ids],
                        rng_calls=rng.calls)


class SchemeRunner:
    """Incremental batch-by-batch scheme execution for a live trial.

    ``run_scheme`` covers whole-sequence simulation; this runner accepts
    batches one at a time and reports per-batch assignments plus match
    changes.  MR (single global batch) and PSR (pairs may straddle batch
    boundaries, leaving an entrant without an immediate arm) do not fit a
    batch-response service contract and are rejected.
    """

    SUPPORTED = ("CR", "SMR", "SRR", "STRAT", "DABCD")

    def __init__(self, config: SchemeConfig, schema: CovariateSchema,
                 seed, planned_N: int) -> None:
        if config.variant not in self.SUPPORTED:
            raise ValidationError(
                f"live batch service supports {', '.join(self.SUPPORTED)}; "
                f"got {config.variant}")
        self.config = config
        self.state = TrialState(schema=schema, planned_N=planned_N,
                                scheme_config=config)
        self.rng = CountingRNG(np.random.default_rng(seed))
        self.driver = _Driver(state=self.state, config=config, rng=self.rng)
        self._blocks: dict = {}
        self._dabcd_count = 0
        self._dabcd_pending: Optional[int] = None
        self.batch_no = 0

    def randomize_batch(self, batch: Sequence[Participant]) -> dict:
        """Assign one enrollment batch; returns assignments and match delta."""
        batch = list(batch)
        if not batch:
            raise ValidationError("empty batch")
        self.batch_no += 1
        bno = self.batch_no
        before = set(self.state.match_state.pairs)
        v = self.config.variant
        if v == "CR":
            self.state.participants.extend(batch)
            arms = cr_assign(len(batch), self.rng)
            for j, part in enumerate(batch):
                self.driver.record(part.id, arms[j], "cr_mti", bno)
        elif v == "SMR":
            smr_randomize_batch(self.driver, batch, bno)
        elif v == "SRR":
            srr_randomize_batch(self.driver, batch, bno)
        elif v == "STRAT":
            for part in batch:
                self.state.participants.append(part)
                arm = stratified_assign(part, self.config.strata_def,
                                        self._blocks, self.rng)
                self.driver.record(part.id, arm, "block", bno)
        elif v == "DABCD":
            warmup = self.config.warmup(self.state.schema.p)
            for part in batch:
                self.state.participants.append(part)
                if self._dabcd_count < warmup:
                    if self._dabcd_pending is None:
                        arm = int(self.rng.integers(0, 2))
                        self._dabcd_pending = arm
                    else:
                        arm = 1 - self._dabcd_pending
                        self._dabcd_pending = None
                    self.driver.record(part.id, arm, "block", bno)
                else:
                    done = self.state.participants[:-1]
                    aX = np.vstack([p.encoded for p in done])
                    aw = np.array([self.driver.arms[p.id] for p in done],
                                  dtype=int)
                    arm = dabcd_assign(part, aX, aw, self.config.coin,
                                       self.rng)
                    self.driver.record(part.id, arm, "cr_mti", bno)
                self._dabcd_count += 1
        after = set(self.state.match_state.pairs)
        ms = self.state.match_state
        assignments = []
        for part in batch:
            assignments.append({
                "id": part.id,
                "arm": self.driver.arms[part.id],
                "mechanism": self.driver.mechanisms[part.id],
                "matched_to": ms.partner_of(part.id),
                "reservoir": part.id in ms.reservoir,
            })
        return {
            "batch": bno,
            "assignments": assignments,
            "pairs_broken": sorted(sorted(p) for p in before - after),
            "pairs_formed": sorted(sorted(p) for p in after - before),
        }


def participants_from_matrix(X: np.ndarray,
                             batch_sizes: Sequence[int],
                             schema: Optional[CovariateSchema] = None
                             ) -> list[list[Participant]]:
    """Wrap an encoded covariate matrix into Participant batches.

    Covariate names are synthetic (x1..xp, all continuous) unless a schema
    with matching encoded dimension is supplied.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if sum(batch_sizes) != X.shape[0]:
        raise ValidationError("batch sizes do not sum to the row count")
    if schema is None:
        schema = CovariateSchema.from_spec(
            [(f"x{j + 1}", "continuous") for j in range(X.shape[1])])
    batches = []
    k = 0
    for bno, size in enumerate(batch_sizes, start=1):
        batch = []
        for _ in range(size):
            raw = {name: float(X[k, c]) for c, name in
                   zip(range(X.shape[1]), schema.names)} \
                if len(schema.names) == X.shape[1] else {}
            batch.append(Participant(id=f"p{k + 1:05d}", enroll_index=k + 1,
                                     batch_index=bno, raw=raw,
                                     encoded=X[k].copy()))
            k += 1
        batches.append(batch)
    return batches


def synthetic_schema(p: int) -> CovariateSchema:
    return CovariateSchema.from_spec(
        [(f"x{j + 1}", "continuous") for j in range(p)])
