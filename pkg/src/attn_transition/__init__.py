"""Interval-scheduled attention elimination and redistribution on a toy
decoder-only transformer, with the measurement tools to study it."""

from .model import ModelConfig, ModelWeights, forward, init_random, load_weights, logit_lens, save_weights
from .rope import RopeConfig
from .transition import (
    DispenseReport,
    IntervalSchedule,
    TransitionParams,
    compare_generation,
    dispense,
    plan_schedule,
    run_with_transition,
)

__version__ = "0.1.0"

__all__ = [
    "DispenseReport",
    "IntervalSchedule",
    "ModelConfig",
    "ModelWeights",
    "RopeConfig",
    "TransitionParams",
    "compare_generation",
    "dispense",
    "forward",
    "init_random",
    "load_weights",
    "logit_lens",
    "plan_schedule",
    "run_with_transition",
    "save_weights",
]
