from .agent import CemAgent, CemConfig, LinearPolicy
from .env import TASK_BETA, PointMassEnv, generate_experts, observation, rollout_expert, step
from .loop import HarnessConfig, TrainingLog, evaluate, perceived_success, run_online_rl

__all__ = [
    "CemAgent",
    "CemConfig",
    "HarnessConfig",
    "LinearPolicy",
    "PointMassEnv",
    "TASK_BETA",
    "TrainingLog",
    "evaluate",
    "generate_experts",
    "observation",
    "perceived_success",
    "rollout_expert",
    "run_online_rl",
    "step",
]
