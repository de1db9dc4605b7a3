"""Grid-panel re-ranking as a Markov decision process, solved with a dueling DQN."""

from .agent import AgentConfig, DQNAgent, QNetwork, train
from .baselines import PolicyKind, brute_force_optimal, random_policy, row_major_policy
from .core import (
    NULL,
    EnvState,
    Item,
    Panel,
    PanelSpec,
    RankingList,
    RewardSpec,
    SlotAction,
    StepRecord,
    assign_rewards,
    initial_state,
    is_terminal,
    legal_actions,
    rollout_placement,
    transition,
)
from .estimator import OraclePlacer, PanelDQN, RandomPlacer, RowMajorPlacer
from .metrics import compute_auc
from .sim import GridUserSimulator, SimulatorConfig, expected_episode_reward

__version__ = "0.1.0"

__all__ = [
    "AgentConfig",
    "DQNAgent",
    "EnvState",
    "GridUserSimulator",
    "Item",
    "NULL",
    "OraclePlacer",
    "Panel",
    "PanelDQN",
    "PanelSpec",
    "PolicyKind",
    "QNetwork",
    "RandomPlacer",
    "RankingList",
    "RewardSpec",
    "RowMajorPlacer",
    "SimulatorConfig",
    "SlotAction",
    "StepRecord",
    "assign_rewards",
    "brute_force_optimal",
    "compute_auc",
    "expected_episode_reward",
    "initial_state",
    "is_terminal",
    "legal_actions",
    "random_policy",
    "rollout_placement",
    "row_major_policy",
    "train",
    "transition",
]
