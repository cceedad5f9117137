"""Grid and case-study execution: replicate workers, pools, reducers.

Everything is deterministic given the top-level seed: every worker derives
its RNG stream from a SeedSequence entropy tuple (seed, unit index, role),
so results are independent of scheduling and chunking.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..core import CovariateSchema, Participant, ValidationError, ingest
from ..distance import (ThresholdSpec, build_matrix, covariance_pinv,
                        empirical_reference, mahalanobis_sq_matrix)
from ..inference import diff_in_means, ols_adjusted_test, t_test
from ..metrics import (ReplicateResult, effective_sample_size,
                       match_quality_percentiles, smd_profile, summarize,
                       sum_matched_distances)
from ..schemes import SchemeConfig, participants_from_matrix, run_scheme
from .gen import SimSetting, gen_setting_dataset, infer_schema

MATCHING_VARIANTS = ("MR", "SMR", "SRR")


def parse_scheme(tag: str, mti: Optional[int] = 4, n_boot: int = 200,
                 strata_def: Optional[dict] = None) -> SchemeConfig:
    """Scheme tags: cr, mr, psr, dabcd, strat, smr:Q:E, srr:D:F, smr:R:E.

    The middle field of smr/srr is a fixed threshold quantile in percent,
    'D' for the dynamic rule, or 'R' for fully relaxed; the last field picks
    empirical (E) or parametric (F) reference estimation.
    """
    parts = tag.strip().lower().split(":")
    head = parts[0]
    if head in ("cr", "mr", "psr", "dabcd"):
        if len(parts) != 1:
            raise ValidationError(f"scheme {head!r} takes no options")
        return SchemeConfig(variant=head.upper(), mti=mti, n_boot=n_boot)
    if head == "strat":
        if strata_def is None:
            raise ValidationError("strat requires a strata definition")
        return SchemeConfig(variant="STRAT", strata_def=strata_def)
    if head in ("smr", "srr"):
        if len(parts) != 3:
            raise ValidationError(f"bad scheme tag {tag!r} (want e.g. smr:20:E)")
        est = parts[2].upper()
        if parts[1] == "d":
            spec = ThresholdSpec(kind="dynamic", estimation=est)
        elif parts[1] == "r":
            spec = ThresholdSpec(kind="relaxed", estimation=est)
        else:
            spec = ThresholdSpec(kind="fixed", q=float(parts[1]) / 100.0,
                                 estimation=est)
        return SchemeConfig(variant=head.upper(), threshold=spec, mti=mti,
                            n_boot=n_boot)
    raise ValidationError(f"unknown scheme tag {tag!r}")


# ---------------------------------------------------------------------------
# Factorial grid


def run_replicate(setting: SimSetting, rep: int) -> list[ReplicateResult]:
    """One grid replicate: a fresh dataset pushed through every scheme.

    Enrollment is fully sequential (batch size 1).  The recorded estimate is
    the null difference in outcome means; balance and matched-distance
    metrics come from the same sequence.
    """
    data_rng = np.random.default_rng(
        np.random.SeedSequence((setting.seed, rep, 0)))
    X, y0 = gen_setting_dataset(setting.cd, setting.cp, setting.n, data_rng)
    batches = participants_from_matrix(X, [1] * setting.n)
    schema = CovariateSchema.from_spec(
        [("x1", "continuous"), ("x2", "continuous")])
    s_pinv = covariance_pinv(X)
    full_d = mahalanobis_sq_matrix(X, s_pinv)
    id_index = {f"p{k + 1:05d}": k for k in range(setting.n)}
    out = []
    for s_idx, tag in enumerate(setting.schemes):
        config = parse_scheme(tag, mti=setting.mti, n_boot=setting.n_boot)
        seq = run_scheme(batches, config,
                         np.random.SeedSequence((setting.seed, rep, 1 + s_idx)),
                         schema)
        W = seq.W
        comp_rng = np.random.default_rng(
            np.random.SeedSequence((setting.seed, rep, 10_000 + s_idx)))
        matched = tuple(float(full_d[id_index[a], id_index[b]])
                        for a, b in (tuple(p) for p in seq.match_state.pairs))
        out.append(ReplicateResult(
            scheme=tag,
            estimate=diff_in_means(y0, W),
            smd=smd_profile(X, W),
            sum_matched_distances=sum_matched_distances(
                seq.match_state, full_d, id_index, comp_rng),
            matched_distances=matched,
            unmatched_count=setting.n - 2 * len(matched),
        ))
    return out


def _grid_chunk(args) -> list[list[ReplicateResult]]:
    setting, reps = args
    return [run_replicate(setting, rep) for rep in reps]


def run_grid(setting: SimSetting, parallelism: int = 1,
             out_dir: Optional[str] = None) -> dict:
    """Run the full replicate set and reduce to per-scheme summaries.

    Returns {scheme tag: MetricsSummary}; when ``out_dir`` is given, writes
    replicates.csv incrementally (checkpointing), summary.csv, and a
    manifest.json with the configuration and seed.
    """
    rep_file = None
    rep_writer = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        rep_file = open(os.path.join(out_dir, "replicates.csv"),
                        "w", newline="")
        rep_writer = csv.writer(rep_file)
        rep_writer.writerow(["rep", "scheme", "estimate", "smd_x1", "smd_x2",
                             "sum_matched_distances", "unmatched_count"])

    chunk = max(1, setting.replicates // max(4 * parallelism, 1))
    rep_ids = list(range(setting.replicates))
    jobs = [(setting, rep_ids[i:i + chunk])
            for i in range(0, setting.replicates, chunk)]
    by_scheme: dict[str, list[ReplicateResult]] = {t: [] for t in setting.schemes}

    def consume(chunk_reps, results):
        for rep, res_list in zip(chunk_reps, results):
            for r in res_list:
                by_scheme[r.scheme].append(r)
                if rep_writer:
                    rep_writer.writerow([
                        rep, r.scheme, f"{r.estimate:.10g}",
                        f"{r.smd[0]:.10g}", f"{r.smd[1]:.10g}",
                        f"{r.sum_matched_distances:.10g}", r.unmatched_count])

    if parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            for (setting_, reps), results in zip(jobs, pool.map(_grid_chunk,
                                                                jobs)):
                consume(reps, results)
    else:
        for job in jobs:
            consume(job[1], _grid_chunk(job))
    if rep_file:
        rep_file.flush()
        rep_file.close()

    def _single(rep: ReplicateResult) -> "MetricsSummary":
        # Smoke runs with one replicate: point values, undefined spread.
        from ..metrics import MetricsSummary
        return MetricsSummary(scheme=rep.scheme, n_replicates=1,
                              rejection_rates={}, alpha=0.05,
                              estimator_sd=float("nan"),
                              estimator_sd_mcse=float("nan"),
                              mean_abs_smd=rep.smd,
                              mean_sum_distances=rep.sum_matched_distances,
                              mean_sum_distances_mcse=float("nan"))

    summaries = {tag: (summarize(by_scheme[tag])
                       if len(by_scheme[tag]) > 1
                       else _single(by_scheme[tag][0]))
                 for tag in setting.schemes}
    if out_dir:
        with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cd", "cp", "n", "scheme", "replicates",
                        "estimator_sd", "estimator_sd_mcse",
                        "mean_sum_distances", "mean_sum_distances_mcse",
                        "mean_abs_smd_x1", "mean_abs_smd_x2"])
            for tag, s in summaries.items():
                w.writerow([setting.cd, setting.cp, setting.n, tag,
                            s.n_replicates,
                            f"{s.estimator_sd:.10g}",
                            f"{s.estimator_sd_mcse:.10g}",
                            f"{s.mean_sum_distances:.10g}",
                            f"{s.mean_sum_distances_mcse:.10g}",
                            f"{s.mean_abs_smd[0]:.10g}",
                            f"{s.mean_abs_smd[1]:.10g}"])
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            json.dump({"kind": "grid", "cd": setting.cd, "cp": setting.cp,
                       "n": setting.n, "replicates": setting.replicates,
                       "schemes": list(setting.schemes), "mti": setting.mti,
                       "seed": setting.seed}, fh, indent=2)
    return summaries


# ---------------------------------------------------------------------------
# Case study: fixed covariates and enrollment, Monte Carlo over sequences.


@dataclass(frozen=True)
class PoolEntry:
    """One randomization sequence, reduced to what the analyses need."""

    W: np.ndarray  # arms in enrollment order
    pairs: tuple  # ((i, j), ...) row indices of final matches
    unmatched: int


def _encoded_columns(schema: CovariateSchema, names: Sequence[str]
                     ) -> list[int]:
    cols = []
    offset = 0
    wanted = set(names)
    for entry in schema.entries:
        if entry.name in wanted:
            cols.extend(range(offset, offset + entry.width))
            wanted.discard(entry.name)
        offset += entry.width
    if wanted:
        raise ValidationError(f"unknown priority covariates: {sorted(wanted)}")
    return cols


def trial_batches(records: Sequence[dict], schema: CovariateSchema,
                  priority: Optional[Sequence[str]] = None
                  ) -> tuple[list[list[Participant]], np.ndarray, np.ndarray]:
    """Participants grouped by batch, the full encoded matrix, and y0.

    When ``priority`` names a covariate subset, participants carry only
    those encoded columns (the matching distance uses them) while the full
    matrix is returned for balance reporting.
    """
    parts = ingest(records, schema)
    X_full = np.vstack([p.encoded for p in parts])
    y0 = np.array([float(r["y0"]) for r in records])
    if priority:
        cols = _encoded_columns(schema, priority)
        for p in parts:
            p.encoded = p.encoded[cols]
    batches: list[list[Participant]] = []
    for p in parts:
        while len(batches) < p.batch_index:
            batches.append([])
        batches[p.batch_index - 1].append(p)
    if any(not b for b in batches):
        raise ValidationError("batch indices must be contiguous from 1")
    return batches, X_full, y0


def _pool_worker(args) -> list[PoolEntry]:
    batches, config, schema_p, seed, scheme_idx, draw_ids = args
    schema = CovariateSchema.from_spec(
        [(f"x{j + 1}", "continuous") for j in range(schema_p)])
    index = {p.id: i for i, p in
             enumerate(q for b in batches for q in b)}
    out = []
    for i in draw_ids:
        seq = run_scheme(batches, config,
                         np.random.SeedSequence((seed, scheme_idx, i)),
                         schema)
        pairs = tuple(sorted((index[a], index[b]) if index[a] < index[b]
                             else (index[b], index[a])
                             for a, b in (tuple(p)
                                          for p in seq.match_state.pairs)))
        out.append(PoolEntry(W=seq.W.astype(np.int8), pairs=pairs,
                             unmatched=len(seq.match_state.reservoir)))
    return out


def sequence_pool(batches: Sequence[Sequence[Participant]],
                  config: SchemeConfig, M: int, seed: int,
                  scheme_idx: int = 0, parallelism: int = 1
                  ) -> list[PoolEntry]:
    """M independent randomization sequences for one scheme configuration.

    Draw i always uses the RNG stream (seed, scheme_idx, i), so pools are
    identical regardless of chunking or worker count.
    """
    p = batches[0][0].encoded.shape[0]
    ids = list(range(M))
    if parallelism <= 1:
        return _pool_worker((batches, config, p, seed, scheme_idx, ids))
    chunk = max(1, M // (4 * parallelism))
    jobs = [(batches, config, p, seed, scheme_idx, ids[i:i + chunk])
            for i in range(0, M, chunk)]
    out: list[PoolEntry] = []
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        for res in pool.map(_pool_worker, jobs):
            out.extend(res)
    return out


def contrast_matrix(W_pool: np.ndarray) -> np.ndarray:
    """Rows a_j with a_j . y = diff_in_means(y, W_j), for vectorized h."""
    W = np.asarray(W_pool, dtype=float)
    n1 = W.sum(axis=1, keepdims=True)
    n0 = W.shape[1] - n1
    return W / n1 - (1 - W) / n0


def pooled_rbi_rates(y0: np.ndarray, W_pool: np.ndarray, delta: float,
                     alpha: float = 0.05) -> tuple[float, np.ndarray]:
    """Leave-one-out randomization-test rejection rate over a pool.

    Each sequence in turn plays the observed one; the remaining M-1 (plus
    the observed itself) form its reference, giving p_i = (#{j != i :
    |h_ij| >= |h_ii|} + 1) / M.  Exact reuse of one pool is valid because
    the draws are exchangeable.
    """
    W = np.asarray(W_pool, dtype=float)
    M = W.shape[0]
    Y = y0[None, :] + delta * W  # observed outcomes per sequence
    A = contrast_matrix(W)
    H = np.abs(Y @ A.T)  # H[i, j] = |h(W_j)| on sequence i's outcomes
    obs = np.diag(H)
    ge = (H >= obs[:, None] - 1e-12).sum(axis=1) - 1  # exclude j == i
    p = (ge + 1) / M
    return float(np.mean(p <= alpha)), p


def case_study(records: Sequence[dict], scheme_tags: Sequence[str],
               priority: Optional[Sequence[str]] = None,
               deltas: Sequence[float] = (0.0, -0.5), M: int = 2000,
               seed: int = 0, mti: Optional[int] = 4,
               parallelism: int = 1, out_dir: Optional[str] = None,
               schema: Optional[CovariateSchema] = None,
               alpha: float = 0.05, n_boot: int = 200,
               smd_sequences: int = 200) -> dict:
    """Fixed-trial Monte Carlo over randomization sequences.

    For each scheme and delta: rejection rates (randomization test for
    adaptive schemes; t-test and adjusted OLS for CR), estimator SD, mean
    absolute SMD over all covariates, match-quality percentiles for
    matching schemes, and the effective-sample-size equivalent of the
    observed power.
    """
    if schema is None:
        schema = infer_schema(records)
    batches, X_full, y0 = trial_batches(records, schema, priority)
    n = len(y0)
    results: dict = {}
    rows = []
    for s_idx, tag in enumerate(scheme_tags):
        config = parse_scheme(tag, mti=mti, n_boot=n_boot)
        pool = sequence_pool(batches, config, M, seed, s_idx, parallelism)
        W_pool = np.vstack([e.W for e in pool])
        # Balance over a fixed-size subsample of sequences (same metric,
        # cheaper; MCSE still reported from the subsample).
        smd_rng = np.random.default_rng(np.random.SeedSequence((seed, s_idx,
                                                                10 ** 6)))
        take = smd_rng.choice(M, size=min(smd_sequences, M), replace=False)
        smd_means = np.array([smd_profile(X_full, W_pool[i]).mean()
                              for i in take])
        quality = None
        if config.variant in MATCHING_VARIANTS:
            X_match = np.vstack([p.encoded for b in batches for p in b])
            s_pinv = covariance_pinv(X_match)
            matrix = build_matrix(X_match, s_pinv)
            ref = empirical_reference(matrix, n_boot,
                                      np.random.default_rng(
                                          np.random.SeedSequence(
                                              (seed, s_idx, 2 * 10 ** 6))))
            percs = []
            for e in pool:
                if e.pairs:
                    ds = [matrix.d[i, j] for i, j in e.pairs]
                    percs.append(
                        float(match_quality_percentiles(ds, ref).mean()))
            quality = float(np.mean(percs)) if percs else None
        results[tag] = {}
        for delta in deltas:
            A = contrast_matrix(W_pool)
            Y = y0[None, :] + delta * W_pool
            ests = np.einsum("ij,ij->i", Y, A)
            entry = {
                "estimator_sd": float(np.std(ests, ddof=1)),
                "mean_abs_smd": float(smd_means.mean()),
                "mean_abs_smd_mcse": float(smd_means.std(ddof=1)
                                           / np.sqrt(len(smd_means))),
                "match_quality": quality,
                "rates": {},
            }
            if config.variant == "CR":
                pt = np.array([t_test(Y[i], W_pool[i]).p_value
                               for i in range(M)])
                po = np.array([ols_adjusted_test(Y[i], W_pool[i],
                                                 X_full).p_value
                               for i in range(M)])
                entry["rates"]["t"] = float(np.mean(pt <= alpha))
                entry["rates"]["ols"] = float(np.mean(po <= alpha))
            rate, _ = pooled_rbi_rates(y0, W_pool, delta, alpha)
            entry["rates"]["rbi"] = rate
            if delta != 0:
                sd_out = float(np.std(y0, ddof=1))
                entry["ess"] = {
                    name: effective_sample_size(r, delta, sd_out, alpha)
                    for name, r in entry["rates"].items()
                    if alpha < r < 1.0}
            results[tag][delta] = entry
            for name, r in entry["rates"].items():
                mcse = float(np.sqrt(max(r * (1 - r), 1e-12) / M))
                rows.append([tag, delta, name, f"{r:.6g}", f"{mcse:.6g}",
                             f"{entry['estimator_sd']:.6g}",
                             f"{entry['mean_abs_smd']:.6g}",
                             "" if quality is None else f"{quality:.6g}",
                             entry.get("ess", {}).get(name, "")])
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "case_study.csv"), "w",
                  newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scheme", "delta", "analysis", "rejection_rate",
                        "rate_mcse", "estimator_sd", "mean_abs_smd",
                        "match_quality", "effective_sample_size"])
            w.writerows(rows)
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            json.dump({"kind": "case-study", "n": n,
                       "schemes": list(scheme_tags),
                       "priority": list(priority) if priority else None,
                       "deltas": list(deltas), "sequences": M,
                       "mti": mti, "seed": seed}, fh, indent=2)
    return results
