"""Cold-Start Meta Lab - task-aligned meta-learning with graph augmentation for cold-start recommendation."""

from __future__ import annotations

__version__ = "0.1.0"

from coldstart_lab.augment import AugmentationResult, AugmentConfig, AugmentParams
from coldstart_lab.autoencoder import AutoencoderParams, train_autoencoder
from coldstart_lab.baseline import MfParams, mf_finetune, mf_train
from coldstart_lab.checkpoint import CheckpointContainer
from coldstart_lab.config import RunConfig, load_config
from coldstart_lab.dataset import ColdStartPartition, ImplicitMatrix, InteractionLog
from coldstart_lab.errors import (
    ColdStartError,
    ConfigError,
    DataError,
    EmptySupportError,
    MissingArtifactError,
    NumericError,
)
from coldstart_lab.evaluator import MetricReport, RankedList
from coldstart_lab.experiments import ExperimentResult, VariantResult
from coldstart_lab.graph import BipartiteGraph, build_graph, propagate
from coldstart_lab.metalearn import MetaConfig, inner_update, meta_test_adapt, meta_train, outer_update
from coldstart_lab.model import LossWeights, ModelParams, TmagObjective
from coldstart_lab.report import ReportGenerator
from coldstart_lab.taskgen import Clustering, Task, TaskSet, kmeans

__all__ = [
    "AugmentConfig",
    "AugmentParams",
    "AugmentationResult",
    "AutoencoderParams",
    "BipartiteGraph",
    "CheckpointContainer",
    "ColdStartError",
    "ColdStartPartition",
    "Clustering",
    "ConfigError",
    "DataError",
    "EmptySupportError",
    "ExperimentResult",
    "ImplicitMatrix",
    "InteractionLog",
    "LossWeights",
    "MetaConfig",
    "MetricReport",
    "MfParams",
    "MissingArtifactError",
    "ModelParams",
    "NumericError",
    "RankedList",
    "ReportGenerator",
    "RunConfig",
    "Task",
    "TaskSet",
    "TmagObjective",
    "VariantResult",
    "build_graph",
    "inner_update",
    "kmeans",
    "load_config",
    "meta_test_adapt",
    "meta_train",
    "mf_finetune",
    "mf_train",
    "outer_update",
    "propagate",
    "train_autoencoder",
]
