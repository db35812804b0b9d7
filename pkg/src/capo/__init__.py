"""Calibration-aware policy optimization on a desk-scale verifiable-reward task."""

from capo.advantage import MaskConfig, advantage_curve, capo_advantage, capo_masked_advantage, grpo_advantage
from capo.metrics import CalibrationReport, auc, auc_mean
from capo.surrogate import SurrogateKind
from capo.toyenv import PolicyParams, TaskSpec, generate_task, pretrain_reference
from capo.trainer import TrainConfig, evaluate, train
from capo.tts import aggregate, select_answer
from capo.types import Group, Response, lpm, ppl

__all__ = [
    "MaskConfig",
    "advantage_curve",
    "capo_advantage",
    "capo_masked_advantage",
    "grpo_advantage",
    "CalibrationReport",
    "auc",
    "auc_mean",
    "SurrogateKind",
    "PolicyParams",
    "TaskSpec",
    "generate_task",
    "pretrain_reference",
    "TrainConfig",
    "evaluate",
    "train",
    "aggregate",
    "select_answer",
    "Group",
    "Response",
    "lpm",
    "ppl",
]
