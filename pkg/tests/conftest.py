"""Common fixtures"""

import os

import numpy as np
import pytest

from weakpos import ExperimentConfig, generate_landmark_env, generate_room_env
from weakpos.collect import collect_dense
from weakpos.msg.config import Obstacle, RoomSpec


def requires_env(key):
    """Skip test if environment variable is not set"""
    env = os.environ.get(key)

    return pytest.mark.skipif(
        env is None or env == "",
        reason=f"Not suitable environment {key} for current test",
    )


@pytest.fixture(name="landmark_env")
def _landmark_env():
    return generate_landmark_env((-1.0, 1.0, -1.0, 1.0), 8, seed=0)


@pytest.fixture(name="room_spec")
def _room_spec() -> RoomSpec:
    return RoomSpec(
        rows=10,
        cols=10,
        cell_size=0.1,
        obstacles=[Obstacle(row=4, col=4, height=2, width=2)],
    )


@pytest.fixture(name="room_env")
def _room_env(room_spec):
    return generate_room_env(room_spec, seed=0)


@pytest.fixture(name="small_config")
def _small_config() -> ExperimentConfig:
    return ExperimentConfig.model_validate(
        {
            "name": "small",
            "environment": {"kind": "landmarks", "landmark_count": 8},
            "collection": {
                "strategy": "dense",
                "spacing": 0.1,
                "segments": 6,
                "min_segment_length": 0.3,
            },
            "model": {"layer_sizes": [8, 16, 16, 2]},
            "training": {"epochs": 3, "batch_size": 32, "log_every": 1},
            "baselines": {
                "explicit_restarts": 2,
                "explicit_max_iters": 20,
                "explicit_subset": 40,
                "pca_components": 4,
                "mds_points": 30,
            },
            "evaluation": {"grid_resolution": 6, "alignment_size": 10},
        }
    )


@pytest.fixture(name="room_config")
def _room_config(room_spec) -> ExperimentConfig:
    return ExperimentConfig.model_validate(
        {
            "name": "room",
            "environment": {"kind": "room", "room": room_spec.model_dump()},
            "collection": {
                "strategy": "dense",
                "spacing": 0.1,
                "segments": 4,
                "n_beams": 8,
                "max_range": 2.0,
                "orientations": 8,
                "orientation_sample": 2,
            },
            "model": {"layer_sizes": [16, 8, 2]},
            "training": {"epochs": 2, "batch_size": 16},
            "baselines": {"pca_components": 4},
            "evaluation": {"alignment_size": 5, "test_count": 10},
        }
    )


@pytest.fixture(name="dense_graph")
def _dense_graph(landmark_env, small_config):
    return collect_dense(landmark_env, small_config.collection, seed=1, noise_seed=2)


@pytest.fixture(name="stream")
def _stream() -> np.random.Generator:
    return np.random.default_rng(42)
