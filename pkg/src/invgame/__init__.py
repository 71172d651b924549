"""Structured imitation of interactive multi-agent policies through inverse games."""

from .config import BenchConfig, load_config
from .dynamics import AgentState, Control, Trajectory, linearize, rollout, step
from .game import JointCostNet, NashSolution, best_response, exploitability, predict_joint, solve_nash
from .ilqgames import RuntimeCostParams, solve_ilqgames, stage_cost, verify_open_loop_nash
from .policy import CandidateSet, GenerativePolicy, elbo, sample_candidates, train_policy

__version__ = "0.1.0"

__all__ = [
    "AgentState",
    "BenchConfig",
    "CandidateSet",
    "Control",
    "GenerativePolicy",
    "JointCostNet",
    "NashSolution",
    "RuntimeCostParams",
    "Trajectory",
    "best_response",
    "elbo",
    "exploitability",
    "linearize",
    "load_config",
    "predict_joint",
    "rollout",
    "sample_candidates",
    "solve_ilqgames",
    "solve_nash",
    "stage_cost",
    "step",
    "train_policy",
    "verify_open_loop_nash",
]
