"""Monte Carlo simulation lab: factorial grid runs and case-study protocol."""

from .gen import (CD_LEVELS, CP_R2, SimSetting, gen_setting_dataset,
                  infer_schema, synthetic_trial, write_trial_csv)
from .runner import (case_study, parse_scheme, run_grid, run_replicate,
                     sequence_pool)

__all__ = [
    "CD_LEVELS", "CP_R2", "SimSetting", "gen_setting_dataset",
    "infer_schema", "synthetic_trial", "write_trial_csv",
    "case_study", "parse_scheme", "run_grid", "run_replicate",
    "sequence_pool",
]
