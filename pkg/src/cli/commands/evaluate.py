"""
Evaluation Commands
"""
from pathlib import Path
from typing import Optional

import click
from rich.table import Table

from ...exceptions import ConfigError
from ...schemas import EvalReport, HyperParams
from ...services.checkpoint_service import load_checkpoint
from ...services.dataset_io import read_dataset
from ...services.evaluation import Evaluator, config_from_checkpoint, evaluate, oracle_predictor, write_report
from ..common import make_console


def metric_table(report: EvalReport) -> Table:
    """One row per subset: Overall IoU, Mean IoU, P@0.5..0.9, mAP"""
    table = Table(title=f"{report.run_id} (beta={report.beta:g})")
    table.add_column("subset", no_wrap=True)
    table.add_column("n", justify="right")
    table.add_column("Overall IoU", justify="right")
    table.add_column("Mean IoU", justify="right")
    for key in report.p_at:
        table.add_column(f"P@{key}", justify="right")
    table.add_column("mAP", justify="right")
    for name, metrics in report.subsets.items():
        table.add_row(name, str(metrics.n_samples), f"{metrics.overall_iou:.4f}", f"{metrics.mean_iou:.4f}",
                      *[f"{v:.4f}" for v in metrics.p_at.values()], f"{metrics.map_50_95:.4f}")
    return table


@click.command("eval")
@click.option("--checkpoint", "checkpoint_path", default=None, type=click.Path(dir_okay=False, path_type=Path),
              help="Trained checkpoint")
@click.option("--data", "data_dir", default=None, type=click.Path(file_okay=False, path_type=Path),
              help="Dataset directory (defaults to <data.path>/val of the checkpoint config)")
@click.option("--beta", type=float, default=None, help="Binarisation threshold fraction (overrides the config)")
@click.option("--output", "output_dir", default=None, type=click.Path(file_okay=False, path_type=Path),
              help="Report directory (defaults to eval.report_dir, then train.output_dir)")
@click.option("--run-id", default=None, help="Identifier written to the report")
@click.option("--jobs", "n_jobs", type=int, default=None, help="Concurrent scoring threads")
@click.option("--oracle", is_flag=True, hidden=True, help="Score the ground truth instead of a model")
def evaluate_command(checkpoint_path: Optional[Path], data_dir: Optional[Path], beta: Optional[float],
                     output_dir: Optional[Path], run_id: Optional[str], n_jobs: Optional[int], oracle: bool):
    """Score a checkpoint and write eval_report.json / eval_report.csv"""
    if checkpoint_path is None and not oracle:
        raise ConfigError("--checkpoint is required")

    if checkpoint_path is None:
        if data_dir is None or output_dir is None:
            raise ConfigError("--oracle without a checkpoint needs --data and --output")
        dataset = read_dataset(data_dir)
        evaluator = Evaluator(beta=beta if beta is not None else HyperParams().beta, n_jobs=n_jobs or 1)
        report = evaluator.evaluate_predictor(dataset, oracle_predictor, run_id=run_id or "oracle")
    else:
        checkpoint = load_checkpoint(checkpoint_path)
        config = config_from_checkpoint(checkpoint)
        dataset = read_dataset(data_dir or Path(config.data.path) / "val")
        output_dir = output_dir or config.eval.report_dir or config.train.output_dir
        report = evaluate(checkpoint, dataset, beta=beta, run_id=run_id or checkpoint_path.stem,
                          n_jobs=n_jobs or config.eval.n_jobs,
                          predictor=oracle_predictor if oracle else None)

    write_report(report, output_dir)
    make_console().print(metric_table(report))
