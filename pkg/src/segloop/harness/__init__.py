from .experiment import (AGGREGATE_COLUMNS, SUMMARY_COLUMNS, ExperimentConfig,
                         ExperimentResult, aggregate_records, load_subjects,
                         make_backend, read_records, run_experiment,
                         summarize_records)
from .phantom import PhantomSpec, generate_phantom
from .session import IterationEntry, SessionRecord, run_session

__all__ = [
    "ExperimentConfig", "ExperimentResult", "PhantomSpec", "SessionRecord",
    "IterationEntry", "generate_phantom", "run_session", "run_experiment",
    "aggregate_records", "summarize_records", "read_records", "load_subjects",
    "make_backend", "AGGREGATE_COLUMNS", "SUMMARY_COLUMNS",
]
