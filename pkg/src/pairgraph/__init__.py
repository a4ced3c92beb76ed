"""Paired two-sample testing of spatial conditional-dependence networks
for matrix-valued (space by time) data."""
from pairgraph.harness import ExperimentConfig, run_experiment
from pairgraph.model import GroundTruthModel, PairedDataset, build_model, sample_paired
from pairgraph.pipeline import KnownTemporal, PipelineError, run_pipeline

__all__ = [
    "ExperimentConfig", "GroundTruthModel", "KnownTemporal", "PairedDataset",
    "PipelineError", "build_model", "run_experiment", "run_pipeline", "sample_paired",
]
__version__ = "0.1.0"
