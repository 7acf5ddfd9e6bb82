"""Pytest configuration and fixtures."""

from __future__ import annotations

import numpy as np
import pytest

from coldstart_lab import pipeline, synth
from coldstart_lab.autoencoder import AutoencoderParams
from coldstart_lab.config import RunConfig
from coldstart_lab.dataset import ImplicitMatrix
from coldstart_lab.graph import build_graph
from coldstart_lab.model import (
    GradientBundle,
    LossBreakdown,
    LossWeights,
    ModelParams,
    ObjectiveOptions,
    TmagObjective,
    central_difference_hvp,
    sample_task_batch,
)

TOY_USERS, TOY_ITEMS, TOY_D, TOY_DZ = 8, 12, 4, 3


class QuadraticObjective:
    """L(θ) = ½ θᵀ diag(h) θ over a single tensor named ``theta``."""

    def __init__(self, diag):
        self.h = np.asarray(diag, dtype=np.float64)

    def gradients(self, params, batch):
        theta = params["theta"]
        loss = 0.5 * float(np.sum(self.h * theta**2))
        return LossBreakdown(loss, 0.0, 0.0, 0.0, loss), GradientBundle({"theta": self.h * theta})

    def hvp(self, params, batch, v, eps=0.0):
        return central_difference_hvp(self, params, batch, v, eps)


@pytest.fixture
def quadratic():
    """Factory for quadratic surrogate objectives."""
    return QuadraticObjective


@pytest.fixture
def theta_one():
    """One-parameter θ = 1."""
    return ModelParams({"theta": np.array([1.0])})


def build_toy_problem(lambdas=(0.1, 0.1, 0.01), finetune_ae=False, layer_combine="last",
                      denominator="negatives", gen_grad="full", seed=0):
    """Objective, parameters and a sampled batch on an 8-user / 12-item / d=4 / L=2 instance."""
    rng = np.random.default_rng(seed)
    dense = rng.random((TOY_USERS, TOY_ITEMS)) < 0.35
    dense[np.arange(TOY_USERS), np.arange(TOY_USERS)] = True
    users, items = np.nonzero(dense)
    m = ImplicitMatrix.from_pairs(users, items, TOY_USERS, TOY_ITEMS)
    x_user = (rng.random((TOY_USERS, 5)) < 0.5).astype(np.float64)
    x_item = (rng.random((TOY_ITEMS, 6)) < 0.5).astype(np.float64)
    x_user[:, 0] = 1.0
    x_item[:, 0] = 1.0
    ae_user = AutoencoderParams.init(5, TOY_DZ, rng)
    ae_item = AutoencoderParams.init(6, TOY_DZ, rng)
    ae_user.b1 = np.full(TOY_DZ, 0.1)
    ae_item.b1 = np.full(TOY_DZ, 0.1)
    params = ModelParams.init(TOY_USERS, TOY_ITEMS, TOY_D, ae_user, ae_item, seed, finetune_ae)
    options = ObjectiveOptions(n_layers=2, layer_combine=layer_combine, gen_alpha=0.8, denominator=denominator,
                               gen_grad=gen_grad, finetune_ae=finetune_ae)
    objective = TmagObjective(build_graph(m), x_user, x_item, LossWeights(*lambdas, tau=0.5), options)
    labels = np.array([0, 0, 0, 1, 1, 1, 2, 2])
    batch = sample_task_batch(m, np.arange(4), objective.graph, np.arange(TOY_ITEMS), np.random.default_rng([seed, 1]),
                              neg_per_pos=2, cluster_labels=labels, contrastive_batch=8)
    return objective, params, batch


@pytest.fixture
def toy_problem():
    """Factory for the small gradient-check instance."""
    return build_toy_problem


@pytest.fixture
def toy_matrix():
    """4 users x 5 items."""
    users = [0, 0, 0, 1, 1, 2, 2, 2, 2, 3]
    items = [0, 1, 2, 1, 3, 0, 2, 3, 4, 4]
    return ImplicitMatrix.from_pairs(users, items, 4, 5)


def small_run_config(data: synth.SynthDataset, workdir) -> RunConfig:
    """A configuration small enough to run the whole pipeline in seconds."""
    return RunConfig(
        seed=3,
        workdir=str(workdir),
        query_size=5,
        embedding_dim=8,
        latent_dim=4,
        ae_max_epochs=40,
        n_layers=2,
        n_clusters=2,
        kmeans_n_init=2,
        augment_top_items=20,
        contrastive_batch=16,
        inner_lr=0.01,
        outer_lr=0.01,
        epochs=2,
        patience=5,
        eval_k=5,
        mf_epochs=2,
        mf_finetune_steps=2,
        synth_users=80,
        synth_items=60,
        synth_clusters=2,
    ).with_overrides(data.overrides())


@pytest.fixture
def synth_data(tmp_path):
    """Small synthetic dataset with two planted clusters."""
    return synth.generate(tmp_path / "synth", n_users=80, n_items=60, k_true=2, seed=3)


@pytest.fixture
def small_config(synth_data, tmp_path):
    return small_run_config(synth_data, tmp_path / "run")


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    """Config of a workspace on which every pipeline stage has run once."""
    root = tmp_path_factory.mktemp("trained")
    data = synth.generate(root / "synth", n_users=80, n_items=60, k_true=2, seed=3)
    cfg = small_run_config(data, root / "run")
    reports = pipeline.run_all(cfg)
    return cfg, reports
