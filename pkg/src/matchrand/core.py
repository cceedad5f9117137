"""Domain types, covariate encoding, and validated ingestion.

Covariates are dummy-encoded: continuous values pass through, binary maps to
{0, 1}, and a categorical with L levels expands to L-1 indicator columns with
the first level as reference.  The encoded dimension p therefore equals the
regression degrees of freedom used by model-based comparator schemes.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

VALID_KINDS = ("continuous", "binary", "categorical")

MECHANISMS = ("cr_mti", "match_complement", "forced_mti", "block")


class ValidationError(ValueError):
    """Raised when input records or configuration violate the schema."""


class InsufficientDataError(ValueError):
    """Raised when an operation needs more data than is available."""


@dataclass(frozen=True)
class CovariateEntry:
    name: str
    kind: str
    levels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in VALID_KINDS:
            raise ValidationError(f"unknown covariate kind {self.kind!r} for {self.name!r}")
        if self.kind == "categorical":
            if len(self.levels) < 2:
                raise ValidationError(f"categorical {self.name!r} needs >= 2 levels")
            if len(set(self.levels)) != len(self.levels):
                raise ValidationError(f"categorical {self.name!r} has duplicate levels")
            if any(not lv for lv in self.levels):
                raise ValidationError(f"categorical {self.name!r} has an empty level")
        elif self.levels:
            raise ValidationError(f"{self.kind} covariate {self.name!r} cannot carry levels")

    @property
    def width(self) -> int:
        if self.kind == "categorical":
            return len(self.levels) - 1
        return 1


@dataclass(frozen=True)
class CovariateSchema:
    entries: tuple[CovariateEntry, ...]

    def __post_init__(self) -> None:
        if not self.entries:
            raise ValidationError("schema needs at least one covariate")
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate covariate names in schema")

    @property
    def p(self) -> int:
        return sum(e.width for e in self.entries)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.entries)

    def column_names(self) -> list[str]:
        """Names of the encoded columns, in schema order."""
        cols: list[str] = []
        for e in self.entries:
            if e.kind == "categorical":
                cols.extend(f"{e.name}={lv}" for lv in e.levels[1:])
            else:
                cols.append(e.name)
        return cols

    @staticmethod
    def from_spec(spec: Sequence[tuple]) -> "CovariateSchema":
        """Build from (name, kind) or (name, 'categorical', levels) tuples."""
        entries = []
        for item in spec:
            if len(item) == 2:
                entries.append(CovariateEntry(item[0], item[1]))
            else:
                entries.append(CovariateEntry(item[0], item[1], tuple(item[2])))
        return CovariateSchema(tuple(entries))


def _encode_value(entry: CovariateEntry, value) -> list[float]:
    if entry.kind == "continuous":
        return [float(value)]
    if entry.kind == "binary":
        if isinstance(value, str):
            low = value.strip().lower()
            if low in ("1", "true", "yes"):
                value = 1
            elif low in ("0", "false", "no"):
                value = 0
            else:
                raise ValidationError(f"bad binary value {value!r} for {entry.name!r}")
        v = int(bool(value)) if not isinstance(value, (int, float)) else int(value)
        if v not in (0, 1):
            raise ValidationError(f"bad binary value {value!r} for {entry.name!r}")
        return [float(v)]
    # categorical
    value = str(value)
    if value not in entry.levels:
        raise ValidationError(
            f"unknown level {value!r} for categorical {entry.name!r} "
            f"(levels: {', '.join(entry.levels)})"
        )
    return [1.0 if value == lv else 0.0 for lv in entry.levels[1:]]


def encode(raw: Mapping[str, object], schema: CovariateSchema) -> np.ndarray:
    """Encode one raw record into a length-p vector.

    Raw values must be complete; imputation of missing entries happens
    upstream of encoding.
    """
    out: list[float] = []
    for entry in schema.entries:
        if entry.name not in raw or raw[entry.name] is None:
            raise ValidationError(f"missing value for {entry.name!r}")
        out.extend(_encode_value(entry, raw[entry.name]))
    vec = np.asarray(out, dtype=float)
    if not np.all(np.isfinite(vec)):
        raise ValidationError("encoded vector contains non-finite entries")
    return vec


@dataclass
class Participant:
    id: str
    enroll_index: int  # 1-based
    batch_index: int  # 1-based
    raw: dict
    encoded: Optional[np.ndarray] = None
    imputed: tuple[str, ...] = ()

    def missing_fields(self, schema: CovariateSchema) -> list[str]:
        return [e.name for e in schema.entries
                if self.raw.get(e.name) is None]


@dataclass(frozen=True)
class Assignment:
    participant_id: str
    arm: int  # 0 or 1
    mechanism: str
    decided_at_batch: int

    def __post_init__(self) -> None:
        if self.arm not in (0, 1):
            raise ValidationError("arm must be 0 or 1")
        if self.mechanism not in MECHANISMS:
            raise ValidationError(f"unknown mechanism {self.mechanism!r}")


@dataclass
class MatchState:
    pairs: set[frozenset] = field(default_factory=set)
    reservoir: set[str] = field(default_factory=set)

    def partner_of(self, pid: str) -> Optional[str]:
        for pair in self.pairs:
            if pid in pair:
                (other,) = pair - {pid}
                return other
        return None

    def check(self, assignments: Mapping[str, Assignment]) -> None:
        seen: set[str] = set()
        for pair in self.pairs:
            a, b = tuple(pair)
            if a in seen or b in seen:
                raise ValidationError("participant appears in two pairs")
            seen.update(pair)
            if a not in assignments or b not in assignments:
                raise ValidationError("paired participant without assignment")
            if assignments[a].arm + assignments[b].arm != 1:
                raise ValidationError("pair arms are not complementary")
        for pid in self.reservoir:
            if pid not in assignments:
                raise ValidationError("reservoir participant without assignment")


@dataclass
class TrialState:
    schema: CovariateSchema
    planned_N: int
    scheme_config: object = None
    participants: list[Participant] = field(default_factory=list)
    assignments: dict[str, Assignment] = field(default_factory=dict)
    match_state: MatchState = field(default_factory=MatchState)
    rng_record: dict = field(default_factory=dict)

    @property
    def enrolled(self) -> int:
        return len(self.participants)

    def remaining(self) -> int:
        # Enrollment past planned_N is tolerated; the remaining count floors at 0.
        return max(0, self.planned_N - self.enrolled)

    def encoded_matrix(self) -> np.ndarray:
        rows = [p.encoded for p in self.participants]
        if any(r is None for r in rows):
            raise ValidationError("participants with unencoded covariates")
        return np.vstack(rows) if rows else np.empty((0, self.schema.p))


def ingest(records: Iterable[Mapping], schema: CovariateSchema,
           allow_missing: bool = False, start_index: int = 0) -> list[Participant]:
    """Validate raw records and produce participants ordered by enrollment.

    Each record needs ``id`` and ``batch`` plus the schema's covariates.
    Batch indices must be non-decreasing in submission order.
    """
    participants: list[Participant] = []
    seen: set[str] = set()
    last_batch = None
    for k, rec in enumerate(records):
        if "id" not in rec or rec["id"] in (None, ""):
            raise ValidationError(f"record {k} has no id")
        pid = str(rec["id"])
        if pid in seen:
            raise ValidationError(f"duplicate participant id {pid!r}")
        seen.add(pid)
        try:
            batch = int(rec["batch"])
        except (KeyError, TypeError, ValueError):
            raise ValidationError(f"record {pid!r} has no valid batch index") from None
        if batch < 1:
            raise ValidationError(f"record {pid!r}: batch index must be >= 1")
        if last_batch is not None and batch < last_batch:
            raise ValidationError(
                f"record {pid!r}: batch indices must be non-decreasing "
                f"({batch} after {last_batch})"
            )
        last_batch = batch
        raw = {e.name: rec.get(e.name) for e in schema.entries}
        part = Participant(id=pid, enroll_index=start_index + k + 1,
                           batch_index=batch, raw=raw)
        missing = part.missing_fields(schema)
        if missing and not allow_missing:
            raise ValidationError(f"record {pid!r} missing values for {missing}")
        if not missing:
            part.encoded = encode(raw, schema)
        participants.append(part)
    return participants


def _blank_to_none(value):
    if value is None:
        return None
    if isinstance(value, str) and value.strip() == "":
        return None
    return value


def read_csv_records(source) -> list[dict]:
    """Read enrollment records from CSV text, a path, or a file object.

    Expects a header with ``id``, ``batch`` and covariate names; empty cells
    become missing values.
    """
    if isinstance(source, str) and "\n" not in source and "," not in source:
        with open(source, newline="") as fh:
            return read_csv_records(fh)
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.DictReader(source)
    if reader.fieldnames is None:
        raise ValidationError("empty CSV input")
    return [{k: _blank_to_none(v) for k, v in row.items()} for row in reader]


def read_json_records(source) -> list[dict]:
    """Read enrollment records from a JSON array (same field names as CSV)."""
    if isinstance(source, (str, bytes)) and not str(source).lstrip().startswith("["):
        with open(source) as fh:
            data = json.load(fh)
    elif isinstance(source, (str, bytes)):
        data = json.loads(source)
    else:
        data = json.load(source)
    if not isinstance(data, list):
        raise ValidationError("JSON input must be an array of records")
    return [{k: _blank_to_none(v) for k, v in rec.items()} for rec in data]
