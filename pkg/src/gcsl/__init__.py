"""Goal-conditioned supervised learning with exact finite-MDP oracles."""
from .buffer import BufferConfig, RelabeledExample, ReplayBuffer, Trajectory
from .env import FiniteEnv, FiniteMdp, FourRooms, make_env
from .evaluation import EvalReport, evaluate
from .policy import Adam, MlpPolicy, TabularPolicy
from .trainer import MetricsRow, TrainConfig, run, train

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "BufferConfig",
    "EvalReport",
    "FiniteEnv",
    "FiniteMdp",
    "FourRooms",
    "MetricsRow",
    "MlpPolicy",
    "RelabeledExample",
    "ReplayBuffer",
    "TabularPolicy",
    "TrainConfig",
    "Trajectory",
    "evaluate",
    "make_env",
    "run",
    "train",
]
