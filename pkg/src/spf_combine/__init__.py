"""Combine expert survey forecasts and test when a prompted combiner beats the simple average."""

from .combiners import CombinerSpec, Component, Method, RuleParams, Sentiment, run_combiner
from .data import AlignedDataset, ForecastPanel, Indicator, SurveyPeriod, TruthSeries, align, window_slice
from .econometrics import ModelSpec, RegressionTable, fit_model

__version__ = "0.1.0"

__all__ = [
    "AlignedDataset", "CombinerSpec", "Component", "ForecastPanel", "Indicator", "Method", "ModelSpec",
    "RegressionTable", "RuleParams", "Sentiment", "SurveyPeriod", "TruthSeries", "align", "fit_model",
    "run_combiner", "window_slice",
]
