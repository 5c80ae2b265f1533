"""Shared fixtures: a tiny, seconds-scale experiment manifest."""

import copy
import json

import pytest

TINY_MANIFEST = {
    "schema_version": 1,
    "task": {"kind": "classification", "n_classes": 4, "metric": "accuracy", "name": "tiny"},
    "world": {
        "n_users": 24,
        "n_items": 36,
        "latent_dim": 4,
        "seed": 9,
        "noise_level": 0.25,
    },
    "split": {"n_estimator_items": 20, "val_fraction": 0.2, "test_fraction": 0.25},
    "als": {"n_factors": 40, "reg_lambda": 0.1, "alpha": 40.0, "n_iterations": 4, "seed": 11},
    "features": {},
    "architecture": {"preset": "cf_estimator_desk", "n_channels": 8},
    "estimator": {
        "epochs": 2,
        "batch_size": 8,
        "learning_rate": 0.003,
        "seed": 100,
        "val_fraction": 0.2,
        "normalize_targets": True,
    },
    "regimes": [
        {"regime": "base", "epochs": 2, "batch_size": 8, "learning_rate": 0.001},
        {"regime": "kd", "kd_weight": 1.0, "epochs": 2, "batch_size": 8, "learning_rate": 0.001},
    ],
    "seeds": [0],
    "folds": 1,
    "dtype": "float32",
}


def make_tiny_manifest(**overrides):
    manifest = copy.deepcopy(TINY_MANIFEST)
    manifest.update(overrides)
    return manifest


@pytest.fixture
def tiny_manifest():
    return make_tiny_manifest()


@pytest.fixture
def tiny_manifest_file(tmp_path, tiny_manifest):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(tiny_manifest, indent=2), encoding="utf-8")
    return path
