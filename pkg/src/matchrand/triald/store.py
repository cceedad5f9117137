"""Append-only, hash-chained event logs for trial persistence.

One line-delimited JSON file per trial.  Every event carries a sequence
number, the previous event's content hash, and its own hash over
(seq, type, data, prev), making tampering or truncation-in-the-middle
detectable on replay.
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import Iterator, Optional

from ..core import ValidationError

GENESIS_PREV = "0" * 64


class LogCorruptionError(RuntimeError):
    """The on-disk event log fails hash-chain or sequence verification."""


def _canonical(seq: int, etype: str, data: dict, prev: str) -> str:
    return json.dumps({"seq": seq, "type": etype, "data": data,
                       "prev": prev},
                      sort_keys=True, separators=(",", ":"))


def event_hash(seq: int, etype: str, data: dict, prev: str) -> str:
    return hashlib.sha256(_canonical(seq, etype, data, prev)
                          .encode()).hexdigest()


class EventLog:
    """Append-only JSONL event log with a sha256 hash chain."""

    def __init__(self, path: str) -> None:
        self.path = path
        self._events: list[dict] = []
        self._last_hash = GENESIS_PREV
        if os.path.exists(path):
            self._load()

    def _load(self) -> None:
        with open(self.path) as fh:
            for lineno, line in enumerate(fh):
                line = line.strip()
                if not line:
                    continue
                try:
                    ev = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise LogCorruptionError(
                        f"{self.path}:{lineno + 1}: bad JSON") from exc
                self._verify(ev, lineno)
                self._events.append(ev)
                self._last_hash = ev["hash"]

    def _verify(self, ev: dict, position: int) -> None:
        expect_prev = (GENESIS_PREV if position == 0
                       else self._events[-1]["hash"])
        if ev.get("seq") != position:
            raise LogCorruptionError(
                f"{self.path}: sequence break at event {position}")
        if ev.get("prev") != expect_prev:
            raise LogCorruptionError(
                f"{self.path}: hash chain break at event {position}")
        if ev.get("hash") != event_hash(ev["seq"], ev["type"], ev["data"],
                                        ev["prev"]):
            raise LogCorruptionError(
                f"{self.path}: content hash mismatch at event {position}")

    def append(self, etype: str, data: dict, fault=None) -> dict:
        """Durably append one event; ``fault`` (tests) runs pre-write and
        may raise, in which case nothing is persisted."""
        seq = len(self._events)
        prev = self._last_hash
        ev = {"seq": seq, "type": etype, "data": data, "prev": prev,
              "hash": event_hash(seq, etype, data, prev)}
        line = json.dumps(ev, sort_keys=True, separators=(",", ":"))
        if fault is not None:
            fault()
        with open(self.path, "a") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        self._events.append(ev)
        self._last_hash = ev["hash"]
        return ev

    def events(self, since: int = -1) -> list[dict]:
        """Events with sequence number strictly greater than ``since``."""
        if since < -1:
            raise ValidationError("since must be >= -1")
        return [ev for ev in self._events if ev["seq"] > since]

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self) -> Iterator[dict]:
        return iter(self._events)


def discover_logs(data_dir: str) -> list[str]:
    if not os.path.isdir(data_dir):
        return []
    return sorted(os.path.join(data_dir, f) for f in os.listdir(data_dir)
                  if f.endswith(".jsonl"))
