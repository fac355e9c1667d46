"""Inference latency and energy benchmarking for binary classifiers with
runtime guardrails, plus the linear cost models fitted to the measurements."""

from infercost.classifiers import AlgorithmKind, Hyper, TrainedModel, op_count, predict, train
from infercost.datasets import DataType, Dataset, generate, preprocess
from infercost.guardrails import (
    FairnessWindow, GuardedPrediction, GuardrailConfig, GuardrailConstants, guarded_predict,
)
from infercost.measurement import (
    CostModelProvider, GridPlan, MeasurementRecord, RaplProvider, RecordSink, measure_energy,
    measure_interleaved, measure_latency, run_grid,
)
from infercost.model import FittedEquation, PredictorInputs, design_row, evaluate, fit

__all__ = [
    "AlgorithmKind", "CostModelProvider", "DataType", "Dataset", "FairnessWindow",
    "FittedEquation", "GridPlan", "GuardedPrediction", "GuardrailConfig", "GuardrailConstants",
    "Hyper", "MeasurementRecord", "PredictorInputs", "RaplProvider", "RecordSink",
    "TrainedModel", "design_row", "evaluate", "fit", "generate", "guarded_predict",
    "measure_energy", "measure_interleaved", "measure_latency", "op_count", "predict", "preprocess", "run_grid", "train",
]
__version__ = "0.1.0"
