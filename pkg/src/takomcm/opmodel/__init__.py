"""Operational model of the täkō hardware."""
from .config import MUTATIONS, Config, load_config
from .explore import ExploreResult, Limits, explore, format_trace, random_walk
from .machine import NOOP, DisabledTransition, Machine, MachineState, Transition

__all__ = [
    "MUTATIONS", "Config", "load_config", "ExploreResult", "Limits", "explore",
    "format_trace", "random_walk", "NOOP", "DisabledTransition", "Machine", "MachineState", "Transition",
]
