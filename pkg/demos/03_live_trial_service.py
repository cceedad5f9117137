"""Driving the live-trial service in process: enroll, impute, audit.

The service behind the HTTP API is an ordinary Python object. This demo
creates a trial, enrolls batches (one with a missing covariate, which gets
imputed from earlier enrollees), edits a covariate after the fact, prints
the balance report, and finally proves the audit trail: replaying the
append-only event log reproduces the live state bit for bit.

Run:  python demos/03_live_trial_service.py
"""

import json
import os
import tempfile

from matchrand.triald import TrialService, replay_log

workdir = tempfile.mkdtemp(prefix="trial-demo-")
service = TrialService(workdir)

# ---------------------------------------------------------------------------
# Create a matched-randomization trial.

config = {"variant": "SMR", "mti": 4, "reservoir_warmup": 2,
          "threshold": {"kind": "dynamic", "estimation": "E"}}
schema = [["age", "continuous", []], ["smoker", "binary", []]]
trial_id = service.create_trial(config, schema, planned_N=12, seed=42,
                                idempotency="demo-2026")
print("trial id:", trial_id)

# ---------------------------------------------------------------------------
# Enroll three batches; the last record arrives with a missing age.

batches = [
    [{"id": "p01", "age": 61.0, "smoker": 1},
     {"id": "p02", "age": 48.0, "smoker": 0}],
    [{"id": "p03", "age": 55.0, "smoker": 0},
     {"id": "p04", "age": 70.0, "smoker": 1},
     {"id": "p05", "age": 52.0, "smoker": 0}],
    [{"id": "p06", "age": None, "smoker": 1}],   # missing covariate
]
for batch in batches:
    out = service.enroll_batch(trial_id, batch)
    arms = {a["id"]: a["arm"] for a in out["assignments"]}
    print("assigned:", arms, "| imputed:",
          [f"{n['id']}.{n['field']}={n['value']} ({n['method']})"
           for n in out["imputations"]] or "nothing")

# A correction comes in from the site: p03's age was mistyped.
service.update_covariate(trial_id, "p03", "age", 57.0)

# ---------------------------------------------------------------------------
# Balance report.

report = service.trial_report(trial_id)
print("\nenrolled:", report["enrolled"], "of", report["planned_n"])
print("per-covariate SMD:", {k: round(v, 3)
                             for k, v in report["smd"].items()})
print("matched pairs:", [m["pair"] for m in report["matches"]])
print("MTI headroom:", report["mti_headroom"])

# ---------------------------------------------------------------------------
# The audit trail: fold the event log and compare with the live state.

log_path = os.path.join(workdir, f"{trial_id}.jsonl")
live = json.dumps(service.snapshot(trial_id), sort_keys=True)
folded = json.dumps(replay_log(log_path).snapshot(), sort_keys=True)
print("\nreplay(log) == live state:", live == folded)
print("event log:", log_path)
