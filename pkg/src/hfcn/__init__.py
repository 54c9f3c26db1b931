"""Highly fused convolutional network for semantic segmentation, in numpy."""

from .metrics import ConfusionMatrix, MetricsReport, compute_report
from .model import ForwardBundle, HfcnConfig, build, forward, predict
from .objective import LAMBDA_GROUPS, LossBreakdown, composite_loss, soft_cost, soft_weights
from .tensor import ParamStore, Tensor, backward, grad_check, tensor_new, tensor_rand_init

__version__ = "0.1.0"
