"""
Shared fixtures: tiny model dimensions, seeded generators and small on-disk datasets
"""
from pathlib import Path

import numpy as np
import pytest
import yaml

from src.schemas import DataConfig, EvalConfig, HyperParams, ModelDims, RunConfig, TrainConfig
from src.services.dataset_io import write_dataset
from src.services.synthgen import generate_dataset

TINY_DIMS = ModelDims(vocab_size=24, max_len=8, d_e=4, d_h=3, c_v=8, stage_channels=[2, 3, 4, 4],
                      lcf_hidden=3, decoder_channels=4, proj_hidden=6, proj_out=5)


def tiny_data_config(path: Path) -> DataConfig:
    return DataConfig(path=path, n_train=3, n_val=2, seed=0, frame_size=32, n_frames=2,
                      min_instances=2, max_instances=3, p_confusable=0.5, max_len=8)


def tiny_run_config(data_root: Path, output_dir: Path, **hyper) -> RunConfig:
    return RunConfig(
        data=tiny_data_config(data_root),
        model=TINY_DIMS,
        hyper=HyperParams(batch_size=2, lr=1e-3, **hyper),
        train=TrainConfig(seed=0, epochs=2, output_dir=output_dir),
        eval=EvalConfig(n_jobs=1),
    )


@pytest.fixture
def tiny_dims() -> ModelDims:
    return TINY_DIMS


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset_root(tmp_path_factory) -> Path:
    """train/ and val/ splits of a few 32x32 two-frame clips, written once per session"""
    root = tmp_path_factory.mktemp("toy")
    config = tiny_data_config(root)
    for split in ("train", "val"):
        write_dataset(generate_dataset(config, split), root / split)
    return root


@pytest.fixture
def tiny_config(tiny_dataset_root, tmp_path) -> RunConfig:
    return tiny_run_config(tiny_dataset_root, tmp_path / "run")


@pytest.fixture
def config_file(tiny_config, tmp_path) -> Path:
    """The tiny run configuration as a YAML file"""
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(tiny_config.model_dump(mode="json")), encoding="utf-8")
    return path


@pytest.fixture
def data_config(tmp_path) -> DataConfig:
    return tiny_data_config(tmp_path / "toy")
