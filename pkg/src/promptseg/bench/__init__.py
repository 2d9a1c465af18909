from .experiments import ExperimentConfig, StudyReport, build_cases, run_experiment
from .reports import emit_report, report_from_json, report_to_json

__all__ = [
    "ExperimentConfig",
    "StudyReport",
    "build_cases",
    "run_experiment",
    "emit_report",
    "report_from_json",
    "report_to_json",
]
