"""Loss-balancing strategies for multi-task learning.

The centerpiece is the transformed-loss objective ``sum_i h(L_i)`` with a
convex increasing ``h`` (by default ``exp(z / T)``), compared against direct
sum, fixed weights, DWA, maximum, soft maximum, self-paced curriculum and
MGDA on shared-bottom models.
"""

from .balancers import (
    LossRecord,
    Strategy,
    TaskWeights,
    compute_weights,
    mgda_step_direction,
    solve_min_norm,
)
from .bounds import BoundInputs, BoundOutputs, eta_nu, linear_model_bound
from .datasets import (
    MultiTaskDataset,
    SplitSpec,
    SyntheticSpec,
    TaskData,
    gen_synthetic,
    load_multioutput_csv,
    minibatches,
    split,
)
from .models import MultiTaskModel, forward, init_linear, init_mlp, task_gradient, task_loss
from .trainer import TrainConfig, TrainReport, evaluate, lr_at, train
from .transforms import TransformSpec, h_derivative, h_value, validate_transform

__version__ = "0.1.0"

__all__ = [
    "BoundInputs", "BoundOutputs", "LossRecord", "MultiTaskDataset", "MultiTaskModel",
    "SplitSpec", "Strategy", "SyntheticSpec", "TaskData", "TaskWeights", "TrainConfig",
    "TrainReport", "TransformSpec", "compute_weights", "eta_nu", "evaluate", "forward",
    "gen_synthetic", "h_derivative", "h_value", "init_linear", "init_mlp",
    "linear_model_bound", "load_multioutput_csv", "lr_at", "mgda_step_direction",
    "minibatches", "solve_min_norm", "split", "task_gradient", "task_loss", "train",
    "validate_transform",
]
