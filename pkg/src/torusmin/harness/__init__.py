"""Configuration, orchestration and command line interface."""

from .config import ExperimentConfig
from .run import RunReport, bowen_combination, evaluate_flags, run

__all__ = ["ExperimentConfig", "RunReport", "bowen_combination", "evaluate_flags", "run"]
