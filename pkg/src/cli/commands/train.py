"""
Training Commands
Single runs, resumed runs and experiment sweeps
"""
from pathlib import Path
from typing import Dict, Optional, Tuple

import click

from ...exceptions import ConfigError
from ...schemas import Ablation
from ...services.checkpoint_service import load_checkpoint
from ...services.experiments import build_points, run_sweep
from ...services.trainer import BEST_CHECKPOINT, fit
from ...settings import load_config
from ..common import config_option


@click.command("train")
@config_option
@click.option("--resume", "resume_path", default=None, type=click.Path(dir_okay=False, path_type=Path),
              help="Checkpoint to continue from")
@click.option("--ablation", "ablations", multiple=True, type=click.Choice([a.value for a in Ablation]),
              help="Switch a component off (repeatable)")
@click.option("--sweep", default=None,
              help="lambda=0.1..1.0:0.1 | ratio=1:1,1:3 | ablation=baseline,ccl,full | seed=0..2")
@click.option("--seed", "seeds", type=int, multiple=True, help="Training seed (repeat for multi-seed runs)")
@click.option("--epochs", type=int, default=None, help="Override train.epochs")
@click.option("--output", "output_dir", default=None, type=click.Path(file_okay=False, path_type=Path),
              help="Override train.output_dir")
@click.option("--parallel", "n_jobs", type=int, default=1, show_default=True,
              help="Sweep points trained concurrently")
def train(config_path: Optional[Path], resume_path: Optional[Path], ablations: Tuple[str, ...],
          sweep: Optional[str], seeds: Tuple[int, ...], epochs: Optional[int], output_dir: Optional[Path],
          n_jobs: int):
    """Train a model (or every point of a sweep) on data.path"""
    overrides: Dict[str, Dict] = {"train": {}}
    if epochs is not None:
        overrides["train"]["epochs"] = epochs
    if output_dir is not None:
        overrides["train"]["output_dir"] = str(output_dir)
    if len(seeds) == 1:
        overrides["train"]["seed"] = seeds[0]
    config = load_config(config_path, overrides, ablations)

    if sweep is not None or len(seeds) > 1:
        if resume_path is not None:
            raise ConfigError("--resume applies to a single run, not to a sweep")
        points = build_points(config, sweep, seeds)
        results = run_sweep(points, Path(config.train.output_dir), n_jobs=n_jobs)
        click.echo(f"sweep: {len(points)} points -> {results}")
        return

    resume_from = load_checkpoint(resume_path) if resume_path is not None else None
    best = fit(config, resume_from=resume_from)
    val_iou = best.metrics.get("val_mean_iou")
    shown = "n/a" if val_iou is None else f"{val_iou:.4f}"
    click.echo(f"best epoch {best.epoch}: val_mean_iou={shown} -> "
               f"{Path(config.train.output_dir) / BEST_CHECKPOINT}")
