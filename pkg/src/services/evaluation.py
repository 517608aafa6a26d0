"""
Evaluation Engine
Runs a predictor over every (clip, sentence) pair, scores it and aggregates the report
"""
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog
from joblib import Parallel, delayed
from pydantic import ValidationError

from ..exceptions import ConfigMismatchError, DimensionError, OutputError
from ..models import ClipRecord, Dataset, ModelParams, Sentence
from ..schemas import EvalReport, RunConfig, SampleResult, SubsetMetrics
from .checkpoint_service import Checkpoint, restore_params
from .metrics import binarize, intersection_union, map_range, p_at_table
from .segmentation import SegmentationModel

logger = structlog.get_logger(__name__)

Predictor = Callable[[ClipRecord, Sentence], np.ndarray]

SUBSET_ALL = "all"
SUBSET_DISCRIMINATION = "discrimination"
REPORT_JSON = "eval_report.json"
REPORT_CSV = "eval_report.csv"
CSV_COLUMNS = ["run_id", "overall_iou", "mean_iou", "p50", "p60", "p70", "p80", "p90", "map", "subset"]


# ================================
# PREDICTORS
# ================================

def model_predictor(model: SegmentationModel, params: ModelParams) -> Predictor:
    def predict(record: ClipRecord, sentence: Sentence) -> np.ndarray:
        return model.predict_probs(record.clip, sentence, params)
    return predict


def oracle_predictor(record: ClipRecord, sentence: Sentence) -> np.ndarray:
    """Ground truth as probabilities"""
    return record.clip.mask_of(sentence.referent_id).astype(np.float64)


def empty_predictor(record: ClipRecord, sentence: Sentence) -> np.ndarray:
    return np.zeros(record.clip.masks[:, 0].shape, dtype=np.float64)


# ================================
# SCORING
# ================================

def aggregate(samples: Sequence[SampleResult], subset: str) -> SubsetMetrics:
    """Overall IoU from summed intersections and unions, mean IoU from per-sample values"""
    ious = [s.iou for s in samples]
    total_i = sum(s.intersection for s in samples)
    total_u = sum(s.union for s in samples)
    return SubsetMetrics(
        subset=subset,
        n_samples=len(samples),
        overall_iou=1.0 if total_u == 0 else total_i / total_u,
        mean_iou=float(np.mean(ious)),
        p_at=p_at_table(ious),
        map_50_95=map_range(ious),
    )


class Evaluator:
    """Score predictions against ground truth with beta-relative binarisation"""

    def __init__(self, beta: float, n_jobs: int = 1):
        self.beta = beta
        self.n_jobs = n_jobs

    def score_sample(self, record: ClipRecord, sentence: Sentence, probs: np.ndarray) -> SampleResult:
        """Binarise each frame, then pool intersection and union over frames"""
        gt = record.clip.mask_of(sentence.referent_id)
        if probs.shape != gt.shape:
            raise DimensionError(f"prediction {probs.shape} vs ground truth {gt.shape} for {record.dir}")
        intersection = union = 0
        for t in range(gt.shape[0]):
            i, u = intersection_union(binarize(probs[t], self.beta), gt[t])
            intersection += i
            union += u
        return SampleResult(
            clip_dir=record.dir,
            referent_id=sentence.referent_id,
            intersection=intersection,
            union=union,
            iou=1.0 if union == 0 else intersection / union,
            confusable=record.confusable,
        )

    def _score(self, predictor: Predictor, record: ClipRecord, sentence: Sentence) -> SampleResult:
        return self.score_sample(record, sentence, predictor(record, sentence))

    def evaluate_predictor(self, dataset: Dataset, predictor: Predictor, run_id: str = "run") -> EvalReport:
        pairs = dataset.samples()
        if self.n_jobs > 1:
            samples = Parallel(n_jobs=self.n_jobs, prefer="threads")(
                delayed(self._score)(predictor, record, sentence) for record, sentence in pairs
            )
        else:
            samples = [self._score(predictor, record, sentence) for record, sentence in pairs]

        overall = aggregate(samples, SUBSET_ALL)
        subsets = {SUBSET_ALL: overall}
        discrimination = [s for s in samples if s.confusable]
        if discrimination:
            subsets[SUBSET_DISCRIMINATION] = aggregate(discrimination, SUBSET_DISCRIMINATION)

        logger.info("Evaluation completed", run_id=run_id, n_samples=len(samples),
                    overall_iou=round(overall.overall_iou, 4), mean_iou=round(overall.mean_iou, 4))
        return EvalReport(
            run_id=run_id,
            beta=self.beta,
            ious=[s.iou for s in samples],
            overall_iou=overall.overall_iou,
            mean_iou=overall.mean_iou,
            p_at=overall.p_at,
            map_50_95=overall.map_50_95,
            subsets=subsets,
            samples=list(samples),
        )


# ================================
# CHECKPOINTS AND REPORTS
# ================================

def config_from_checkpoint(checkpoint: Checkpoint) -> RunConfig:
    try:
        return RunConfig.model_validate(checkpoint.config)
    except ValidationError as e:
        raise ConfigMismatchError(f"checkpoint carries an invalid config snapshot: {e.errors()[0]['msg']}") from e


def check_compatible(config: RunConfig, dataset: Dataset) -> None:
    if config.data.frame_size != dataset.frame_size:
        raise ConfigMismatchError(f"checkpoint expects {config.data.frame_size}px frames, "
                                  f"dataset has {dataset.frame_size}px")
    if config.model.vocab_size != len(dataset.vocab):
        raise ConfigMismatchError(f"checkpoint vocabulary has {config.model.vocab_size} tokens, "
                                  f"dataset vocabulary has {len(dataset.vocab)}")
    if any(s.max_len != config.model.max_len for _, s in dataset.samples()):
        raise ConfigMismatchError(f"dataset sentences are not padded to {config.model.max_len} tokens")


def load_model(checkpoint: Checkpoint) -> Tuple[RunConfig, SegmentationModel, ModelParams]:
    """Rebuild the model a checkpoint was trained with"""
    config = config_from_checkpoint(checkpoint)
    model = SegmentationModel(config.model, config.contrastive, config.hyper)
    params = model.init_params(config.train.seed)
    restore_params(checkpoint, params)
    return config, model, params


def evaluate(checkpoint: Checkpoint, dataset: Dataset, beta: Optional[float] = None, run_id: str = "run",
             n_jobs: int = 1, predictor: Optional[Predictor] = None) -> EvalReport:
    """Score a checkpoint (or an injected predictor) on ``dataset``"""
    try:
        config, model, params = load_model(checkpoint)
        check_compatible(config, dataset)
        beta = config.effective_beta if beta is None else beta
        evaluator = Evaluator(beta=beta, n_jobs=n_jobs)
        return evaluator.evaluate_predictor(dataset, predictor or model_predictor(model, params), run_id=run_id)
    except ConfigMismatchError as e:
        logger.error(f"Evaluation failed: {str(e)}", run_id=run_id)
        raise


def report_rows(report: EvalReport) -> List[Dict[str, Union[str, float]]]:
    rows = []
    for name, metrics in report.subsets.items():
        row: Dict[str, Union[str, float]] = {
            "run_id": report.run_id,
            "overall_iou": metrics.overall_iou,
            "mean_iou": metrics.mean_iou,
        }
        for key, value in metrics.p_at.items():
            row[f"p{int(round(float(key) * 100))}"] = value
        row["map"] = metrics.map_50_95
        row["subset"] = name
        rows.append(row)
    return rows


def append_csv(rows: List[Dict], path: Path, columns: Optional[List[str]] = None) -> Path:
    """Append rows, writing the header only when the file is new"""
    frame = pd.DataFrame(rows, columns=columns)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, mode="a", header=not path.exists(), index=False)
    return path


def write_report(report: EvalReport, out_dir: Union[str, Path]) -> Tuple[Path, Path]:
    """JSON report plus one CSV row per subset"""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        json_path = out / REPORT_JSON
        json_path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
        csv_path = append_csv(report_rows(report), out / REPORT_CSV, CSV_COLUMNS)
        logger.info("Report written", json=str(json_path), csv=str(csv_path))
        return json_path, csv_path
    except OSError as e:
        logger.error(f"Report write failed: {str(e)}", out_dir=str(out))
        raise OutputError(f"cannot write report: {e.strerror or e}", path=str(out)) from e
