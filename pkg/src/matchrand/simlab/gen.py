"""Synthetic data generators for the simulation grid and the case study.

The factorial grid crosses a covariate-distribution factor (CD) with a
covariate-prognosis factor (CP): two baseline covariates, the second either
dichotomous (20% or 50% prevalence) or standard normal, each explaining a
mild (10%) or moderate (25%) share of outcome variance.  Binary covariates
enter the outcome model standardized by their theoretical mean and SD so the
per-covariate R-squared is exact by construction and Var(y0) = 1.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..core import CovariateSchema, ValidationError

CD_LEVELS = {
    "CD1": ("bernoulli", 0.2),
    "CD2": ("bernoulli", 0.5),
    "CD3": ("normal", None),
}

# (R^2 of covariate 1, R^2 of covariate 2)
CP_R2 = {
    "CP1": (0.25, 0.25),
    "CP2": (0.10, 0.25),
    "CP3": (0.25, 0.10),
    "CP4": (0.10, 0.10),
}


@dataclass(frozen=True)
class SimSetting:
    cd: str
    cp: str
    n: int
    replicates: int
    schemes: tuple[str, ...]
    mti: Optional[int] = 4
    seed: int = 0
    n_boot: int = 200

    def __post_init__(self) -> None:
        if self.cd not in CD_LEVELS:
            raise ValidationError(f"unknown covariate distribution {self.cd!r}")
        if self.cp not in CP_R2:
            raise ValidationError(f"unknown prognosis setting {self.cp!r}")
        if self.replicates < 1:
            raise ValidationError("replicates must be >= 1")
        if self.n < 4:
            raise ValidationError("n must be >= 4")
        if not self.schemes:
            raise ValidationError("at least one scheme required")


def gen_setting_dataset(cd: str, cp: str, n: int, rng: np.random.Generator
                        ) -> tuple[np.ndarray, np.ndarray]:
    """One dataset of the grid: raw covariates (n x 2) and outcomes y0."""
    if cd not in CD_LEVELS or cp not in CP_R2:
        raise ValidationError("unknown grid setting")
    x1 = rng.standard_normal(n)
    z1 = x1  # already standard
    kind, prev = CD_LEVELS[cd]
    if kind == "bernoulli":
        x2 = (rng.random(n) < prev).astype(float)
        z2 = (x2 - prev) / np.sqrt(prev * (1 - prev))
    else:
        x2 = rng.standard_normal(n)
        z2 = x2
    r1, r2 = CP_R2[cp]
    eps = rng.normal(0.0, np.sqrt(1.0 - r1 - r2), n)
    y0 = np.sqrt(r1) * z1 + np.sqrt(r2) * z2 + eps
    return np.column_stack([x1, x2]), y0


# ---------------------------------------------------------------------------
# Case-study dataset: a 512-participant trial with ten baseline covariates
# and a continuous outcome with roughly a third of its variance explained.


TRIAL_N = 512
TRIAL_OUTCOME_SD = 2.0
TRIAL_SCHEMA = CovariateSchema.from_spec([
    ("site", "binary"),
    ("baseline_score", "continuous"),
    ("age", "continuous"),
    ("gender", "binary"),
    ("education_years", "continuous"),
    ("diagnosis_years", "continuous"),
    ("category5", "categorical", ("a", "b", "c", "d", "e")),
    ("category3", "categorical", ("low", "mid", "high")),
    ("income", "categorical", ("q1", "q2", "q3", "q4")),
    ("insurance", "binary"),
])

# Variance shares of the four prognostic covariates; they sum to 0.32.
_TRIAL_R2 = {"baseline_score": 0.18, "age": 0.06, "gender": 0.04,
             "category5": 0.04}


def synthetic_trial(seed: int = 20260823, n: int = TRIAL_N
                    ) -> tuple[list[dict], CovariateSchema]:
    """Fixed synthetic enrollment records for the case-study protocol.

    Records carry ``id``, ``batch`` (weekly batches of 2-8), the ten
    covariates, and an outcome column ``y0`` (total SD 2.0, covariates
    explaining ~32% of the variance).
    """
    rng = np.random.default_rng(seed)
    z_base = rng.standard_normal(n)
    z_age = rng.standard_normal(n)
    gender = (rng.random(n) < 0.6).astype(int)
    z_gender = (gender - 0.6) / np.sqrt(0.24)
    cat5_idx = rng.integers(0, 5, n)
    # Equally likely level scores -2..2, unit-variance by construction.
    scores5 = np.array([-2.0, -1.0, 0.0, 1.0, 2.0]) / np.sqrt(2.0)
    z_cat5 = scores5[cat5_idx]

    r = _TRIAL_R2
    noise_var = 1.0 - sum(r.values())
    y0 = TRIAL_OUTCOME_SD * (
        np.sqrt(r["baseline_score"]) * z_base
        + np.sqrt(r["age"]) * z_age
        + np.sqrt(r["gender"]) * z_gender
        + np.sqrt(r["category5"]) * z_cat5
        + np.sqrt(noise_var) * rng.standard_normal(n)
    ) + 8.0

    site = (rng.random(n) < 0.5).astype(int)
    baseline = 8.0 + 1.5 * z_base
    age = np.clip(58.0 + 12.0 * z_age, 18, 95)
    education = rng.integers(8, 21, n).astype(float)
    diagnosis = np.round(rng.gamma(2.0, 4.0, n), 1)
    cat3 = np.array(TRIAL_SCHEMA.entries[7].levels)[rng.integers(0, 3, n)]
    income = np.array(TRIAL_SCHEMA.entries[8].levels)[rng.integers(0, 4, n)]
    insurance = (rng.random(n) < 0.8).astype(int)
    cat5 = np.array(TRIAL_SCHEMA.entries[6].levels)[cat5_idx]

    # Weekly enrollment: batch sizes drawn once, fixed thereafter.
    sizes = []
    left = n
    while left > 0:
        s = min(int(rng.integers(2, 9)), left)
        sizes.append(s)
        left -= s

    records = []
    k = 0
    for bno, size in enumerate(sizes, start=1):
        for _ in range(size):
            records.append({
                "id": f"p{k + 1:05d}",
                "batch": bno,
                "site": int(site[k]),
                "baseline_score": round(float(baseline[k]), 3),
                "age": round(float(age[k]), 1),
                "gender": int(gender[k]),
                "education_years": float(education[k]),
                "diagnosis_years": float(diagnosis[k]),
                "category5": str(cat5[k]),
                "category3": str(cat3[k]),
                "income": str(income[k]),
                "insurance": int(insurance[k]),
                "y0": round(float(y0[k]), 6),
            })
            k += 1
    return records, TRIAL_SCHEMA


def write_trial_csv(records: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(records[0]))
        writer.writeheader()
        writer.writerows(records)


def infer_schema(records: Sequence[dict],
                 skip: Sequence[str] = ("id", "batch", "y0")
                 ) -> CovariateSchema:
    """Guess covariate kinds from the data: {0,1} columns are binary,
    other numeric columns continuous, everything else categorical."""
    if not records:
        raise ValidationError("no records")
    spec = []
    for name in records[0]:
        if name in skip:
            continue
        values = [r[name] for r in records if r.get(name) is not None]
        try:
            nums = {float(v) for v in values}
            if nums <= {0.0, 1.0}:
                spec.append((name, "binary"))
            else:
                spec.append((name, "continuous"))
        except (TypeError, ValueError):
            levels = tuple(sorted({str(v) for v in values}))
            spec.append((name, "categorical", levels))
    return CovariateSchema.from_spec(spec)
