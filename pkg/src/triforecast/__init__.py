"""Linear-time patch-attention forecasting for multivariate time series."""

from .autodiff import (
    ConfigurationError,
    NonFiniteError,
    Parameter,
    Tensor,
    adam_step,
    backward,
    no_grad,
    zero_grad,
)
from .data import (
    DataError,
    SeriesTable,
    SplitSpec,
    StandardizeStats,
    WindowDataset,
    apply_stats,
    destandardize,
    fit_stats,
    load_csv,
    save_csv,
    split,
    standardize_table,
    synth,
    windows,
)
from .model import (
    Forecaster,
    ModelConfig,
    complexity_probe,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
    validate_config,
)
from .training import RunHistory, TrainConfig, evaluate, persistence_baseline, train
from .vsm import parameter_count

__version__ = "0.1.0"
