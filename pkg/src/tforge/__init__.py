"""Relative-timing models for patient event sequences.

A small attention network assigns every event symbol a trainable relative
timing ``tau`` per patient. Independent seeded runs form a possibility
ensemble; timing attention (kurtosis of ``tau``) drives pathway discovery,
and frozen-weight optimisation of ``tau`` gives counterfactual timings.
"""

from .types import Cohort, EventInstance, EventSymbol, PatientRecord, PossibilityX, PossibilityY
from .cohortgen import GenSpec, generate_cohort, load_cohort, reference_spec, save_cohort
from .model import ModelConfig, ModelParams, TrainingDiverged, forward, train
from .attention import attention_stat, kurtosis, rank_by_attention
from .store import PossibilityStore, RunRecord, run_ensemble
from .trajectory import MinerParams, cluster_pathways, extract_pathways, mine
from .counterfactual import CfConfig, classify_disposition, deduce, kde, run_counterfactual, select_cohort

__version__ = "0.1.0"

__all__ = [
    "CfConfig",
    "Cohort",
    "EventInstance",
    "EventSymbol",
    "GenSpec",
    "MinerParams",
    "ModelConfig",
    "ModelParams",
    "PatientRecord",
    "PossibilityStore",
    "PossibilityX",
    "PossibilityY",
    "RunRecord",
    "TrainingDiverged",
    "attention_stat",
    "classify_disposition",
    "cluster_pathways",
    "deduce",
    "extract_pathways",
    "forward",
    "generate_cohort",
    "kde",
    "kurtosis",
    "load_cohort",
    "mine",
    "rank_by_attention",
    "reference_spec",
    "run_counterfactual",
    "run_ensemble",
    "save_cohort",
    "select_cohort",
    "train",
]
