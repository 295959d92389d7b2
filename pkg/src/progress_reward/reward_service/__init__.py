from .backends import OracleBackend, PolicyBackend, RemoteBackend, ScriptedBackend, ScriptSpec, make_backend
from .client import RewardClient
from .protocol import RewardQuery, RewardReply
from .rewards import RewardMap, interpolate_rewards, potential_shaped, progress_to_reward
from .server import ServiceConfig, ServiceHandle, serve

__all__ = [
    "OracleBackend",
    "PolicyBackend",
    "RemoteBackend",
    "RewardClient",
    "RewardMap",
    "RewardQuery",
    "RewardReply",
    "ScriptSpec",
    "ScriptedBackend",
    "ServiceConfig",
    "ServiceHandle",
    "interpolate_rewards",
    "make_backend",
    "potential_shaped",
    "progress_to_reward",
    "serve",
]
