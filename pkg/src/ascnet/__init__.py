"""Teacher-student graph convolution networks for early action prediction.

Nodes are the features of the partial videos at each progress level; the
teacher sees every level, the student only earlier ones, and layer features
are distilled from teacher to student.
"""

from .data import Dataset, SyntheticSpec, VideoSample, generate_synthetic, load_features, write_features
from .evaluation import AblationVariant, EvalReport, ablation_suite, apply_ablation, evaluate
from .loss import LossFlags, LossReport, total_loss
from .model import AscNet, ForwardTrace, ModelConfig, build, forward, predict
from .numerics import ComputeMode, Matrix2, grad_check
from .training import TrainConfig, lr_at, train

__all__ = [
    "AblationVariant", "AscNet", "ComputeMode", "Dataset", "EvalReport", "ForwardTrace", "LossFlags",
    "LossReport", "Matrix2", "ModelConfig", "SyntheticSpec", "TrainConfig", "VideoSample",
    "ablation_suite", "apply_ablation", "build", "evaluate", "forward", "generate_synthetic",
    "grad_check", "load_features", "lr_at", "predict", "total_loss", "train", "write_features",
]
