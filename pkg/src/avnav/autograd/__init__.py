from .checkpoint import CheckpointError
from .checkpoint import load as load_checkpoint
from .checkpoint import save as save_checkpoint
from .nn import (
    DistributionError,
    ParameterSet,
    ShapeError,
    categorical_sample,
    conv2d,
    entropy,
    gru_step,
    linear,
    log_prob,
    log_softmax,
    masked_log_softmax,
    softmax,
)
from .optim import OptimizerState, adam_step, clip_by_global_norm
from .tensor import Tensor, no_grad, relu, sigmoid, tanh
