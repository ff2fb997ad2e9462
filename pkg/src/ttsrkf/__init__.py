"""Tensor-train square-root Kalman filtering for online GP regression."""

from .errors import (
    ConfigError,
    DataIOError,
    DomainError,
    InvalidArgument,
    NumericalFailure,
    ResourceLimitError,
    TTSRKFError,
)
from .tensor_core import Rank1FeatureTT, TensorTrain, TensorTrainMatrix
from .tnsrkf import FilterState, GaussianPrediction, SweepConfig, init_filter, predict, predict_batch, step

__version__ = "0.1.0"
