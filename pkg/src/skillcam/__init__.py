"""Surgical skill classification from robot kinematics.

A channel-grouped 1-D convolutional network classifies a trial's
multivariate kinematic recording into novice/intermediate/expert, and
class activation maps turn the final feature maps into per-frame feedback
about which movements drove the decision.
"""

from .cam import CamMap, compute_cam, export_cam_csv, export_trajectory_svg, normalize_cam
from .data import (
    ChannelStats,
    Manifest,
    MTS,
    Skill,
    Task,
    Trial,
    canonical_grouping,
    default_column_map,
    load_manifest,
    load_trials,
    loso_folds,
    normalize,
    parse_kinematics,
    spectral_baseline_accuracy,
    synth_generate,
)
from .metrics import ConfusionMatrix, aggregate_runs, macro_measure, micro_accuracy
from .model import (
    ChannelGrouping,
    SkillNet,
    build_model,
    forward,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .training import (
    LosoResult,
    TrainConfig,
    TrainReport,
    run_loso,
    split_validation,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "CamMap",
    "ChannelGrouping",
    "ChannelStats",
    "ConfusionMatrix",
    "LosoResult",
    "MTS",
    "Manifest",
    "Skill",
    "SkillNet",
    "Task",
    "TrainConfig",
    "TrainReport",
    "Trial",
    "aggregate_runs",
    "build_model",
    "canonical_grouping",
    "compute_cam",
    "default_column_map",
    "export_cam_csv",
    "export_trajectory_svg",
    "forward",
    "load_checkpoint",
    "load_manifest",
    "load_trials",
    "loso_folds",
    "macro_measure",
    "micro_accuracy",
    "normalize",
    "normalize_cam",
    "parse_kinematics",
    "predict",
    "run_loso",
    "save_checkpoint",
    "spectral_baseline_accuracy",
    "split_validation",
    "synth_generate",
    "train",
]
