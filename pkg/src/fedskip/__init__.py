"""Federated learning simulator with skip aggregation (FedSkip) and baselines."""

from fedskip.model import Batch, Example, ModelSpec, ParamVector
from fedskip.config import ExperimentConfig, parse_config
from fedskip.simulation import RoundRecord, run_federated

__all__ = ["Batch", "Example", "ExperimentConfig", "ModelSpec", "ParamVector",
           "RoundRecord", "parse_config", "run_federated"]
