"""Prediction-powered causal inference on synthetic experiments."""

from .dgp import DgpSpec, Dataset, sample, true_ate, load_idx, render_glyph
from .errors import ConfigError, DataError, NumericalError, PpciError
from .estimators import aipw, difference_in_means, fit_nuisances
from .harness import BenchmarkConfig, run_benchmark, summarize
from .nn import Predictor, TrainConfig, init_predictor, predict, train

__all__ = [
    "BenchmarkConfig", "ConfigError", "DataError", "Dataset", "DgpSpec",
    "NumericalError", "PpciError", "Predictor", "TrainConfig", "aipw",
    "difference_in_means", "fit_nuisances", "init_predictor", "load_idx",
    "predict", "render_glyph", "run_benchmark", "sample", "summarize",
    "train", "true_ate",
]
