"""
Prediction Command
"""
from pathlib import Path
from typing import Optional

import click

from ...services.checkpoint_service import load_checkpoint
from ...services.prediction import predict_clip


@click.command("predict")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(dir_okay=False, path_type=Path),
              help="Trained checkpoint")
@click.option("--clip", "clip_dir", required=True, type=click.Path(file_okay=False, path_type=Path),
              help="Clip directory holding frame_0.ppm, frame_1.ppm, ...")
@click.option("--sentence", required=True, help="Description of the object to segment")
@click.option("--output", "output_dir", default=Path("predictions"), show_default=True,
              type=click.Path(file_okay=False, path_type=Path), help="Where masks and overlays go")
@click.option("--beta", type=float, default=None, help="Binarisation threshold fraction (overrides the config)")
def predict_command(checkpoint_path: Path, clip_dir: Path, sentence: str, output_dir: Path, beta: Optional[float]):
    """Segment the object a sentence refers to in every frame of a clip"""
    written = predict_clip(load_checkpoint(checkpoint_path), clip_dir, sentence, output_dir, beta=beta)
    click.echo(f"{len(written)} images -> {output_dir}")
