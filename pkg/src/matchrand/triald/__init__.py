"""Persistent live-trial randomization service (event-sourced)."""

from .service import (TrialService, config_from_dict, config_to_dict,
                      impute_missing, replay_log, schema_from_spec,
                      schema_to_spec)
from .store import EventLog, LogCorruptionError

__all__ = [
    "TrialService", "config_from_dict", "config_to_dict", "impute_missing",
    "replay_log", "schema_from_spec", "schema_to_spec", "EventLog",
    "LogCorruptionError",
]
