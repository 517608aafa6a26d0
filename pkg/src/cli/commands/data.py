"""
Dataset Commands
"""
import shutil
from pathlib import Path
from typing import Optional

import click
import structlog

from ...exceptions import ConfigError
from ...services.dataset_io import write_dataset
from ...services.synthgen import generate_dataset
from ...settings import load_config
from ..common import config_option

logger = structlog.get_logger(__name__)

SPLITS = ("train", "val")


@click.command("gen-data")
@config_option
@click.option("--force", is_flag=True, help="Replace an existing non-empty dataset directory")
@click.option("--seed", type=int, default=None, help="First seed of the training range")
@click.option("--jobs", "n_jobs", type=int, default=1, show_default=True, help="Clips rendered concurrently")
def gen_data(config_path: Optional[Path], force: bool, seed: Optional[int], n_jobs: int):
    """Generate the train and val splits under data.path"""
    overrides = {"data": {"seed": seed}} if seed is not None else None
    config = load_config(config_path, overrides)
    root = Path(config.data.path)

    if root.exists() and (not root.is_dir() or any(root.iterdir())):
        if not force:
            raise ConfigError(f"{root} already exists and is not empty (use --force to regenerate)")
        logger.info("Removing existing dataset", path=str(root))
        if root.is_dir():
            shutil.rmtree(root)
        else:
            root.unlink()

    for split in SPLITS:
        dataset = generate_dataset(config.data, split, n_jobs=n_jobs)
        write_dataset(dataset, root / split)
        n_sentences = sum(len(r.sentences) for r in dataset.clips)
        n_confusable = sum(r.confusable for r in dataset.clips)
        click.echo(f"{split}: {len(dataset.clips)} clips, {n_sentences} sentences, "
                   f"{n_confusable} confusable -> {root / split}")
