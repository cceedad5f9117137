"""Live-trial randomization service: event-sourced trials over SchemeRunner.

Every mutation is one atomic transaction: validate, compute on a shadow
copy of the engine, append the event to the hash-chained log, then swap the
shadow in.  A failure at any point (including injected log faults) leaves
both the log and the in-memory state untouched.  Replaying a log from
genesis re-executes imputation and randomization deterministically and
verifies the recomputed assignments against the logged ones.
"""

from __future__ import annotations

import copy
import hashlib
import os
import secrets
import threading
from typing import Optional, Sequence

import numpy as np

from ..core import (CovariateSchema, InsufficientDataError, Participant,
                    ValidationError, encode)
from ..distance import (ThresholdSpec, build_matrix, covariance_pinv,
                        empirical_reference)
from ..metrics import match_quality_percentiles, smd_profile
from ..schemes import SchemeConfig, SchemeRunner
from .store import EventLog, discover_logs

_MIN_DONORS = 5


# ---------------------------------------------------------------------------
# Config / schema serialization


def config_to_dict(config: SchemeConfig) -> dict:
    thr = None
    if config.threshold is not None:
        thr = {"kind": config.threshold.kind, "q": config.threshold.q,
               "estimation": config.threshold.estimation}
    return {"variant": config.variant, "threshold": thr, "mti": config.mti,
            "coin": config.coin, "strata_def": config.strata_def,
            "reservoir_warmup": config.reservoir_warmup,
            "n_boot": config.n_boot,
            "allow_reservoir_pairs": config.allow_reservoir_pairs}


def config_from_dict(data: dict) -> SchemeConfig:
    if not isinstance(data, dict) or "variant" not in data:
        raise ValidationError("scheme config must be an object with a variant")
    thr = data.get("threshold")
    spec = None
    if thr is not None:
        spec = ThresholdSpec(kind=thr.get("kind", "fixed"), q=thr.get("q"),
                             estimation=thr.get("estimation", "E"))
    return SchemeConfig(
        variant=data["variant"], threshold=spec, mti=data.get("mti"),
        coin=data.get("coin", 0.75), strata_def=data.get("strata_def"),
        reservoir_warmup=data.get("reservoir_warmup"),
        n_boot=data.get("n_boot", 200),
        allow_reservoir_pairs=data.get("allow_reservoir_pairs", False))


def schema_to_spec(schema: CovariateSchema) -> list:
    return [[e.name, e.kind, list(e.levels)] for e in schema.entries]


def schema_from_spec(spec: Sequence) -> CovariateSchema:
    if not spec:
        raise ValidationError("schema spec is empty")
    return CovariateSchema.from_spec(
        [(s[0], s[1], tuple(s[2])) if len(s) > 2 and s[2] else (s[0], s[1])
         for s in spec])


# ---------------------------------------------------------------------------
# Predictive mean matching imputation


def _numeric_target(entry, value) -> float:
    if entry.kind == "categorical":
        return float(entry.levels.index(str(value)))
    return float(value)


def impute_missing(record: dict, donors: Sequence[Participant],
                   schema: CovariateSchema) -> tuple[dict, list[dict]]:
    """Complete one raw record by predictive mean matching.

    For each missing covariate: OLS of that covariate on the record's
    observed covariates over donors with a genuinely observed target, then
    copy the value of the donor whose prediction is nearest the record's
    (ties: lowest enroll_index).  Fewer than 5 donors falls back to the
    donor-pool mean (continuous) or mode (binary/categorical).
    """
    observed = [e for e in schema.entries if record.get(e.name) is not None]
    missing = [e for e in schema.entries if record.get(e.name) is None]
    if not observed:
        raise ValidationError("all covariates missing; cannot impute")
    completed = dict(record)
    notes: list[dict] = []
    for entry in missing:
        pool = [d for d in donors
                if d.raw.get(entry.name) is not None
                and entry.name not in d.imputed]
        if not pool:
            raise InsufficientDataError(
                f"no donors with observed {entry.name!r}")
        if len(pool) < _MIN_DONORS:
            values = [d.raw[entry.name] for d in pool]
            if entry.kind == "continuous":
                value = float(np.mean([float(v) for v in values]))
                method = "mean"
            else:
                counts: dict = {}
                for v in values:
                    counts[str(v)] = counts.get(str(v), 0) + 1
                value = min(counts, key=lambda k: (-counts[k], k))
                if entry.kind == "binary":
                    value = int(float(value))
                method = "mode"
            donor_id = None
        else:
            # Design: intercept + the record's observed covariates, encoded.
            sub_schema = CovariateSchema(tuple(observed))

            def row(raw):
                return encode({e.name: raw[e.name] for e in observed},
                              sub_schema)

            D = np.vstack([row(d.raw) for d in pool])
            D = np.column_stack([np.ones(len(pool)), D])
            y = np.array([_numeric_target(entry, d.raw[entry.name])
                          for d in pool])
            beta = np.linalg.pinv(D.T @ D, hermitian=True) @ D.T @ y
            preds = D @ beta
            target = float(np.concatenate([[1.0], row(record)]) @ beta)
            gaps = np.abs(preds - target)
            order = sorted(range(len(pool)),
                           key=lambda i: (gaps[i], pool[i].enroll_index))
            donor = pool[order[0]]
            value = donor.raw[entry.name]
            donor_id = donor.id
            method = "pmm"
        completed[entry.name] = value
        notes.append({"id": record.get("id"), "field": entry.name,
                      "value": value, "method": method, "donor": donor_id})
    return completed, notes


# ---------------------------------------------------------------------------
# Trial runtime and service


class TrialRuntime:
    """One trial's engine plus bookkeeping rebuilt from / backed by its log."""

    def __init__(self, trial_id: str, config: SchemeConfig,
                 schema: CovariateSchema, planned_N: int, seed: int,
                 log: EventLog) -> None:
        self.trial_id = trial_id
        self.config = config
        self.schema = schema
        self.planned_N = planned_N
        self.seed = seed
        self.log = log
        self.engine = SchemeRunner(config, schema, seed, planned_N)
        self.lock = threading.Lock()

    @property
    def enrolled(self) -> int:
        return self.engine.state.enrolled

    @property
    def closed(self) -> bool:
        return self.enrolled >= self.planned_N

    def by_id(self) -> dict:
        return {p.id: p for p in self.engine.state.participants}

    def snapshot(self) -> dict:
        """Canonical state digest; equals the fold of the event log."""
        state = self.engine.state
        ms = state.match_state
        return {
            "trial_id": self.trial_id,
            "config": config_to_dict(self.config),
            "schema": schema_to_spec(self.schema),
            "planned_n": self.planned_N,
            "seed": self.seed,
            "events": len(self.log),
            "batches": self.engine.batch_no,
            "participants": [
                {"id": p.id, "enroll_index": p.enroll_index,
                 "batch": p.batch_index,
                 "raw": {k: p.raw[k] for k in sorted(p.raw)},
                 "imputed": sorted(p.imputed)}
                for p in state.participants],
            "assignments": {
                pid: {"arm": a.arm, "mechanism": a.mechanism,
                      "batch": a.decided_at_batch}
                for pid, a in sorted(state.assignments.items())},
            "pairs": sorted(sorted(p) for p in ms.pairs),
            "reservoir": sorted(ms.reservoir),
            "imbalance": self.engine.driver.imbalance,
            "rng_calls": self.engine.rng.calls,
        }


def _apply_batch(runtime: TrialRuntime, engine: SchemeRunner,
                 records: Sequence[dict]) -> tuple[list[Participant], dict,
                                                   list[dict]]:
    """Validate, impute, and randomize one batch on the given engine."""
    if not records:
        raise ValidationError("empty batch")
    enrolled = {p.id for p in engine.state.participants}
    schema = runtime.schema
    batch: list[Participant] = []
    notes: list[dict] = []
    seen: set[str] = set()
    bno = engine.batch_no + 1
    start = engine.state.enrolled
    if runtime.planned_N - start < len(records):
        raise ValidationError("batch exceeds planned enrollment")
    for k, rec in enumerate(records):
        pid = str(rec.get("id") or "")
        if not pid:
            raise ValidationError(f"record {k} has no id")
        if pid in enrolled or pid in seen:
            raise ValidationError(f"participant {pid!r} already enrolled")
        seen.add(pid)
        raw = {e.name: rec.get(e.name) for e in schema.entries}
        completed, rec_notes = impute_missing(
            raw, engine.state.participants, schema) \
            if any(v is None for v in raw.values()) else (raw, [])
        for n in rec_notes:
            n["id"] = pid
        notes.extend(rec_notes)
        part = Participant(
            id=pid, enroll_index=start + k + 1, batch_index=bno,
            raw=completed,
            imputed=tuple(n["field"] for n in rec_notes))
        part.encoded = encode(completed, schema)
        batch.append(part)
    result = engine.randomize_batch(batch)
    return batch, result, notes


class TrialService:
    """Persistent multi-trial randomization service."""

    def __init__(self, data_dir: str) -> None:
        self.data_dir = data_dir
        os.makedirs(data_dir, exist_ok=True)
        self.trials: dict[str, TrialRuntime] = {}
        self._tokens: dict[str, str] = {}  # idempotency token -> trial id
        self._registry_lock = threading.Lock()
        for path in discover_logs(data_dir):
            runtime = replay_log(path)
            self.trials[runtime.trial_id] = runtime
            token = runtime.log.events(-1)[0]["data"].get("idempotency")
            if token:
                self._tokens[token] = runtime.trial_id

    def _log_path(self, trial_id: str) -> str:
        return os.path.join(self.data_dir, f"{trial_id}.jsonl")

    def _get(self, trial_id: str) -> TrialRuntime:
        runtime = self.trials.get(trial_id)
        if runtime is None:
            raise KeyError(f"unknown trial {trial_id!r}")
        return runtime

    def create_trial(self, config, schema, planned_N: int,
                     seed: Optional[int] = None,
                     idempotency: Optional[str] = None) -> str:
        if isinstance(config, dict):
            config = config_from_dict(config)
        if not isinstance(schema, CovariateSchema):
            schema = schema_from_spec(schema)
        if planned_N < 1:
            raise ValidationError("planned_N must be >= 1")
        with self._registry_lock:
            if idempotency and idempotency in self._tokens:
                return self._tokens[idempotency]
            if seed is None:
                seed = secrets.randbits(63)
            if idempotency:
                digest = hashlib.sha256(idempotency.encode()).hexdigest()
            else:
                digest = secrets.token_hex(8)
            trial_id = f"t{digest[:12]}"
            if trial_id in self.trials:
                raise ValidationError(f"trial {trial_id!r} already exists")
            # Validate the runner config before persisting anything.
            SchemeRunner(config, schema, seed, planned_N)
            log = EventLog(self._log_path(trial_id))
            log.append("create", {
                "trial_id": trial_id, "seed": seed, "planned_n": planned_N,
                "config": config_to_dict(config),
                "schema": schema_to_spec(schema),
                "idempotency": idempotency})
            runtime = TrialRuntime(trial_id, config, schema, planned_N,
                                   seed, log)
            self.trials[trial_id] = runtime
            if idempotency:
                self._tokens[idempotency] = trial_id
            return trial_id

    def enroll_batch(self, trial_id: str, records: Sequence[dict],
                     fault=None) -> dict:
        runtime = self._get(trial_id)
        with runtime.lock:
            if runtime.closed:
                raise ValidationError("trial closed (planned enrollment met)")
            shadow = copy.deepcopy(runtime.engine)
            batch, result, notes = _apply_batch(runtime, shadow, records)
            event_records = [
                {"id": p.id,
                 **{e.name: records[k].get(e.name)
                    for e in runtime.schema.entries}}
                for k, p in enumerate(batch)]
            runtime.log.append("batch", {
                "records": event_records,
                "imputations": notes,
                "assignments": result["assignments"],
                "pairs_broken": result["pairs_broken"],
                "pairs_formed": result["pairs_formed"]}, fault=fault)
            runtime.engine = shadow
            return {**result, "imputations": notes,
                    "trial_closed": runtime.closed}

    def update_covariate(self, trial_id: str, pid: str, name: str, value,
                         fault=None) -> dict:
        runtime = self._get(trial_id)
        with runtime.lock:
            if runtime.closed:
                raise ValidationError("trial closed (planned enrollment met)")
            part = runtime.by_id().get(pid)
            if part is None:
                raise ValidationError(f"unknown participant {pid!r}")
            if name not in runtime.schema.names:
                raise ValidationError(f"unknown covariate {name!r}")
            new_raw = dict(part.raw)
            new_raw[name] = value
            new_encoded = encode(new_raw, runtime.schema)  # validates value
            ev = runtime.log.append("update", {"id": pid, "field": name,
                                               "value": value}, fault=fault)
            part.raw = new_raw
            part.encoded = new_encoded
            if name in part.imputed:
                part.imputed = tuple(f for f in part.imputed if f != name)
            return {"seq": ev["seq"], "id": pid, "field": name,
                    "value": value}

    def trial_report(self, trial_id: str) -> dict:
        runtime = self._get(trial_id)
        state = runtime.engine.state
        arms = {pid: a.arm for pid, a in state.assignments.items()}
        n1 = sum(arms.values())
        n0 = len(arms) - n1
        if n1 < 2 or n0 < 2:
            raise InsufficientDataError("report needs >= 2 per arm")
        X = state.encoded_matrix()
        W = np.array([arms[p.id] for p in state.participants])
        smds = smd_profile(X, W)
        ms = state.match_state
        s_pinv = covariance_pinv(X)
        index = {p.id: i for i, p in enumerate(state.participants)}
        matrix = build_matrix(X, s_pinv)
        matches = []
        pairs = sorted(sorted(p) for p in ms.pairs)
        if pairs:
            dists = [float(matrix.d[index[a], index[b]]) for a, b in pairs]
            # Purity: the reference stream depends only on the event count.
            ref_rng = np.random.default_rng(
                np.random.SeedSequence((runtime.seed, 10 ** 9,
                                        len(runtime.log))))
            try:
                ref = empirical_reference(matrix, runtime.config.n_boot,
                                          ref_rng)
                percs = match_quality_percentiles(dists, ref)
            except InsufficientDataError:
                percs = [None] * len(dists)
            for (a, b), dist, pc in zip(pairs, dists, percs):
                matches.append({"pair": [a, b], "distance": dist,
                                "quality_percentile": None if pc is None
                                else float(pc)})
        mti = runtime.config.mti
        headroom = (None if mti is None
                    else mti - abs(runtime.engine.driver.imbalance))
        return {
            "trial_id": trial_id,
            "enrolled": state.enrolled,
            "planned_n": runtime.planned_N,
            "allocation": {"treatment": n1, "control": n0},
            "smd": {name: float(v) for name, v in
                    zip(runtime.schema.column_names(), smds)},
            "reservoir": sorted(ms.reservoir),
            "matches": matches,
            "mti": mti,
            "mti_headroom": headroom,
            "imputed": {p.id: sorted(p.imputed)
                        for p in state.participants if p.imputed},
        }

    def events(self, trial_id: str, since: int = -1) -> list[dict]:
        return self._get(trial_id).log.events(since)

    def snapshot(self, trial_id: str) -> dict:
        return self._get(trial_id).snapshot()


def replay_log(path: str) -> TrialRuntime:
    """Rebuild a trial from its event log, verifying every assignment.

    Re-executes imputation and randomization from the logged inputs and
    seed; any divergence from the logged outcomes raises.
    """
    log = EventLog(path)
    events = log.events(-1)
    if not events or events[0]["type"] != "create":
        raise ValidationError(f"{path}: log does not start with creation")
    genesis = events[0]["data"]
    config = config_from_dict(genesis["config"])
    schema = schema_from_spec(genesis["schema"])
    runtime = TrialRuntime(genesis["trial_id"], config, schema,
                           genesis["planned_n"], genesis["seed"], log)
    for ev in events[1:]:
        if ev["type"] == "batch":
            _, result, notes = _apply_batch(runtime, runtime.engine,
                                            ev["data"]["records"])
            if result["assignments"] != ev["data"]["assignments"] or \
                    notes != ev["data"]["imputations"]:
                raise ValidationError(
                    f"{path}: replay diverged at event {ev['seq']}")
        elif ev["type"] == "update":
            data = ev["data"]
            part = runtime.by_id()[data["id"]]
            part.raw = {**part.raw, data["field"]: data["value"]}
            part.encoded = encode(part.raw, schema)
            if data["field"] in part.imputed:
                part.imputed = tuple(f for f in part.imputed
                                     if f != data["field"])
        else:
            raise ValidationError(f"{path}: unknown event type {ev['type']!r}")
    return runtime
