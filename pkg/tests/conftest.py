"""Session-scoped workspaces shared by CLI, service, and acceptance tests."""

import numpy as np
import pytest

from primid.align import compute_landmark_template, read_landmark_csv, save_template
from primid.model import PrimNetConfig, StageSpec, TrainConfig, build_primnet, save_weights
from primid.toydata import source_image_dataset


def thin_model_config(seed=0, **train_kwargs):
    """Full-size input with thin stages: fast enough for wiring tests."""
    return PrimNetConfig(
        stages=(StageSpec(8, 1), StageSpec(16, 4), StageSpec(16, 8), StageSpec(16, 8)),
        embed_dim=32,
        train=TrainConfig(seed=seed, **train_kwargs),
    )


@pytest.fixture(scope="session")
def small_workspace(tmp_path_factory):
    """8 individuals x 4 source images: align/enroll/identify wiring tests."""
    root = tmp_path_factory.mktemp("toy_small")
    manifest = source_image_dataset(root, num_classes=8, per_class=4, seed=11)
    return {"root": root, "manifest": manifest,
            "csv": root / "landmarks.csv", "images": root / "images"}


@pytest.fixture(scope="session")
def eval_workspace(tmp_path_factory):
    """20 individuals x 12 images: enough impostor pairs for TAR@0.1%FAR
    with 2 folds (10 test individuals -> 10*12*9 = 1080 impostors)."""
    root = tmp_path_factory.mktemp("toy_eval")
    manifest = source_image_dataset(root, num_classes=20, per_class=12, seed=5)
    return {"root": root, "manifest": manifest,
            "csv": root / "landmarks.csv", "images": root / "images"}


@pytest.fixture(scope="session")
def template_file(small_workspace, tmp_path_factory):
    rows = read_landmark_csv(small_workspace["csv"])
    template = compute_landmark_template(rows)
    path = tmp_path_factory.mktemp("tpl") / "template.json"
    save_template(template, path)
    return path


@pytest.fixture(scope="session")
def thin_model_file(tmp_path_factory):
    """Deterministically initialized (untrained) thin model on disk."""
    model = build_primnet(thin_model_config(seed=42))
    path = tmp_path_factory.mktemp("model") / "model.prim"
    save_weights(model, path)
    return path
