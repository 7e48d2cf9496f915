"""Dense-and-implicit attention networks on a small numpy autodiff core."""

from .analysis import HiddenStateTrace, IntegrationMatrix, capture_traces, integration_matrix
from .backbone import Network, NetworkConfig, StageSpec, count_model_params
from .cells import AttentionUnit, DiaLstmParams, SeParams, StandardLstmParams, count_params
from .config import ExperimentConfig, load_config, parse_config
from .errors import ConfigError, NumericalExplosion
from .forest import ForestParams, RegressionForest
from .tensor import Parameter, Tensor, no_grad
from .train import RunRecord, TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AttentionUnit", "ConfigError", "DiaLstmParams", "ExperimentConfig", "ForestParams", "HiddenStateTrace",
    "IntegrationMatrix", "Network", "NetworkConfig", "NumericalExplosion", "Parameter", "RegressionForest",
    "RunRecord", "SeParams", "StageSpec", "StandardLstmParams", "Tensor", "TrainConfig", "capture_traces",
    "count_model_params", "count_params", "evaluate", "integration_matrix", "load_config", "no_grad",
    "parse_config", "train",
]
