"""Knowledge-distillation lab: SimKD classifier reuse, vanilla KD and variants."""

from .checkpoint import read_checkpoint, write_checkpoint
from .data import Dataset, gen_synthetic, normalize, read_dataset, write_dataset
from .distill import (
    Assembly,
    DistillConfig,
    ParamBudget,
    TrainReport,
    distill_joint,
    distill_kd,
    distill_simkd,
    distill_simkd_plus,
    evaluate,
    multi_teacher,
    pruning_ratio,
    pruning_ratio_exact,
    sequential_linear_eval,
    train_model,
)
from .network import Model, NetworkSpec, build, param_count, plain_cnn
from .projector import ProjectorSpec, build_projector, check_proposition, projector_param_formula

__version__ = "0.1.0"

__all__ = [
    "Assembly", "Dataset", "DistillConfig", "Model", "NetworkSpec", "ParamBudget", "ProjectorSpec",
    "TrainReport", "build", "build_projector", "check_proposition", "distill_joint", "distill_kd",
    "distill_simkd", "distill_simkd_plus", "evaluate", "gen_synthetic", "multi_teacher", "normalize",
    "param_count", "plain_cnn", "projector_param_formula", "pruning_ratio", "pruning_ratio_exact",
    "read_checkpoint", "read_dataset", "sequential_linear_eval", "train_model", "write_checkpoint",
    "write_dataset",
]
