"""Edit-MDP environment, decoder policy and REINFORCE trainer."""
from .config import TrainerConfig
from .env import ActionSpace, MDPState, candidate_actions, initial_state, terminal_reward
from .policy import PolicyParams, init_policy, policy_forward
from .reinforce import (
    AdamState,
    BaselineState,
    EpisodeTrace,
    TinyTask,
    TrainingLog,
    policy_gradient_check,
    reinforce_update,
    rollout,
    train_policy,
)

__all__ = [
    "ActionSpace", "AdamState", "BaselineState", "EpisodeTrace", "MDPState", "PolicyParams",
    "TinyTask", "TrainerConfig", "TrainingLog", "candidate_actions", "init_policy",
    "initial_state", "policy_forward", "policy_gradient_check", "reinforce_update",
    "rollout", "terminal_reward", "train_policy",
]
