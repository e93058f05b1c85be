"""margincnn: a small from-scratch CNN with swappable softmax / SVM heads.

The package trains the classic two-conv architecture (conv5x5 -> relu ->
pool, twice, then fc -> relu -> dropout -> fc) on MNIST-family data and
compares cross-entropy against one-vs-all hinge objectives under an
otherwise identical protocol.  Everything is plain numpy float64, with the
convolution and pooling inner loops compiled by numba in a fixed summation
order so runs are bit-reproducible.
"""

from .errors import (
    ConfigError,
    FormatError,
    MarginCnnError,
    ShapeError,
    SizeError,
    StateError,
    TrainingError,
)
from .experiment import (
    MetricRecord,
    RunSummary,
    TrainConfig,
    evaluate,
    load_model,
    read_metrics,
    run_train,
    save_model,
    summarize,
    write_metrics,
)
from .layers import ModelParams, cnn_backward, cnn_forward, init_model
from .objectives import (
    HeadKind,
    LossHead,
    accuracy,
    encode_targets,
    head_loss,
    l1svm_loss,
    l2svm_loss,
    predict,
    softmax_ce,
)
from .optim import AdamConfig, AdamState, adam_init, adam_step
from .tensor import Rng

__version__ = "0.1.0"

__all__ = [
    "AdamConfig",
    "AdamState",
    "ConfigError",
    "FormatError",
    "HeadKind",
    "LossHead",
    "MarginCnnError",
    "MetricRecord",
    "ModelParams",
    "Rng",
    "RunSummary",
    "ShapeError",
    "SizeError",
    "StateError",
    "TrainConfig",
    "TrainingError",
    "accuracy",
    "adam_init",
    "adam_step",
    "cnn_backward",
    "cnn_forward",
    "encode_targets",
    "evaluate",
    "head_loss",
    "init_model",
    "l1svm_loss",
    "l2svm_loss",
    "load_model",
    "predict",
    "read_metrics",
    "run_train",
    "save_model",
    "softmax_ce",
    "summarize",
    "write_metrics",
]
