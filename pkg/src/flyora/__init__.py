"""Energy-efficient SF/TP allocation for LoRa networks served by a flying
gateway: A2G channel model, allocation environment, PPO solver with
action-space reduction, and classical baseline allocators."""

__version__ = "0.1.0"

from .channel import ChannelConfig, Position3D, DEFAULT_CHANNEL
from .env import LoRaAllocEnv, decode_action, encode_action
from .network import (AllocationState, Topology, energy_efficiency,
                      generate_topology, validate_allocation)
from .phy import (DEFAULT_PHY, LoRaPhyConfig, SPREADING_FACTORS, TP_LEVELS_DBM,
                  lora_data_rate, sensitivity, snr_limit)
from .ppo import Hyperparams, PolicyParams, train

__all__ = [
    "__version__",
    "AllocationState", "ChannelConfig", "DEFAULT_CHANNEL", "DEFAULT_PHY",
    "Hyperparams", "LoRaAllocEnv", "LoRaPhyConfig", "PolicyParams",
    "Position3D", "SPREADING_FACTORS", "TP_LEVELS_DBM", "Topology",
    "decode_action", "encode_action", "energy_efficiency",
    "generate_topology", "lora_data_rate", "sensitivity", "snr_limit",
    "train", "validate_allocation",
]
