from .diagnostics import (
    SUMMARY_COLUMNS,
    SummaryRow,
    equal_tailed,
    ess,
    hdi,
    max_rhat,
    rhat,
    split_ess,
    split_rhat,
    summarize,
    write_summary_csv,
)
from .nuts import DualAveraging, SamplerConfig, WindowSchedule, chain_rngs, nuts_sample
from .trace import DETERMINISTIC, Trace

__all__ = [
    "SUMMARY_COLUMNS",
    "SummaryRow",
    "equal_tailed",
    "ess",
    "hdi",
    "max_rhat",
    "rhat",
    "split_ess",
    "split_rhat",
    "summarize",
    "write_summary_csv",
    "DualAveraging",
    "SamplerConfig",
    "WindowSchedule",
    "chain_rngs",
    "nuts_sample",
    "DETERMINISTIC",
    "Trace",
]
