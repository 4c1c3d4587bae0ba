"""Taxi route recommendation: tabular TD control with self-check restarts on zone MDPs."""

from .baselines import GreedyKind, greedy_next, run_greedy
from .benchmark import BenchmarkConfig, BenchmarkReport, benchmark_suite
from .evaluation import Route, eval_route, evaluate_route, log_improvement, occupancy_rate
from .learner import LearnerConfig, generate_path, run_atdsc, run_td_plain
from .mdp import CityModel, MdpConfig, MdpModel

__version__ = "0.1.0"

__all__ = [
    "BenchmarkConfig", "BenchmarkReport", "CityModel", "GreedyKind", "LearnerConfig", "MdpConfig",
    "MdpModel", "Route", "benchmark_suite", "eval_route", "evaluate_route", "generate_path",
    "greedy_next", "log_improvement", "occupancy_rate", "run_atdsc", "run_greedy", "run_td_plain",
]
