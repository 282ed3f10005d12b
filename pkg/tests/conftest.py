from __future__ import annotations

import json
import time
from pathlib import Path

import pytest

from paca.data import UnpairedDataset
from paca.losses import LossWeights, SsimConfig
from paca.networks import DiscriminatorConfig, GeneratorConfig
from paca.training import TrainConfig, load_checkpoint, pretrain

from synthfix import fixture_tensors, write_fixture


def tiny_train_config(**overrides) -> TrainConfig:
    """Small-but-real config for fast unit tests (side 32, width 4)."""
    base = dict(
        stage="pretrain",
        epochs_flat=2,
        epochs_decay=0,
        gen=GeneratorConfig(side=32, base_width=4, n_res=1),
        disc=DiscriminatorConfig(side=32, base_width=4),
        ssim=SsimConfig(scales=2),
        weights=LossWeights(),
        seed=11,
        pool_size=4,
    )
    base.update(overrides)
    return TrainConfig(**base)


def desk_train_config(**overrides) -> TrainConfig:
    """The 64px desk preset used by the acceptance criteria."""
    base = dict(
        stage="pretrain",
        epochs_flat=30,
        epochs_decay=0,
        gen=GeneratorConfig(),
        disc=DiscriminatorConfig(),
        ssim=SsimConfig(),
        weights=LossWeights(),
        seed=7,
        batch_size=4,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def fixture_paths(tmp_path_factory) -> dict[str, Path]:
    root = tmp_path_factory.mktemp("synth_fixture")
    return write_fixture(root, n_per_domain=64, side=64, seed=0)


@pytest.fixture(scope="session")
def desk_data() -> dict:
    return fixture_tensors(n_per_domain=64, side=64, seed=0)


@pytest.fixture(scope="session")
def desk_dataset(desk_data) -> UnpairedDataset:
    return UnpairedDataset(
        domain_a=desk_data["domain_a"],
        domain_b=desk_data["domain_b"],
        transfer_pair=desk_data["pair"],
    )


@pytest.fixture(scope="session")
def tiny_dataset() -> UnpairedDataset:
    data = fixture_tensors(n_per_domain=6, side=32, seed=3)
    return UnpairedDataset(
        domain_a=data["domain_a"],
        domain_b=data["domain_b"],
        transfer_pair=data["pair"],
    )


@pytest.fixture(scope="session")
def desk_pretrained(desk_dataset, tmp_path_factory) -> dict:
    """The 30-epoch fixture pre-training run shared by several criteria."""
    out = tmp_path_factory.mktemp("desk_pretrain")
    cfg = desk_train_config()
    records: list[dict] = []
    log_path = out / "train_log.jsonl"
    started = time.monotonic()
    ckpt = pretrain(desk_dataset, cfg, out, log_path=log_path)
    elapsed = time.monotonic() - started
    with open(log_path) as fh:
        for line in fh:
            records.append(json.loads(line))
    return {"ckpt": ckpt, "records": records, "elapsed": elapsed, "cfg": cfg, "out": out}


@pytest.fixture(scope="session")
def desk_base_state(desk_pretrained):
    return load_checkpoint(desk_pretrained["ckpt"])
