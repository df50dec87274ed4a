"""Shared fixtures: tiny topologies, datasets, and models sized for fast tests."""

from __future__ import annotations

import numpy as np
import pytest

from skelcompose.model import Model, ModelConfig
from skelcompose.skeleton import SkeletonSequence, SkeletonTopology
from skelcompose.synthetic import synth_generate


@pytest.fixture
def chain_topology():
    """0 <- 1 <- 2 <- 3, root at 0."""
    return SkeletonTopology((0, 0, 1, 2))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset():
    """2 classes, 12 performances, 2 views, 5 joints, 8 frames."""
    return synth_generate(2, 12, 2, n_joints=5, n_frames=8, noise_sd=0.01, seed=7)


@pytest.fixture(scope="session")
def tiny_model_cfg():
    return ModelConfig(embed_dim=8, frames=8, n_joints=5, n_heads=2, ffn_mult=2)


@pytest.fixture(scope="session")
def tiny_model(tiny_model_cfg):
    return Model(tiny_model_cfg, seed=0)


def random_sequence(rng, n_joints=5, n_frames=8, **meta) -> SkeletonSequence:
    coords = rng.standard_normal((3, n_joints, n_frames)).astype(np.float32)
    return SkeletonSequence(coords=coords, **meta)
