"""
Experiment Orchestration
Ablation grid, multi-seed runs and lambda / ratio sensitivity sweeps.
Every point trains in its own output directory and contributes rows to
one sweep_results.csv
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from joblib import Parallel, delayed

from ..exceptions import ConfigError
from ..schemas import Ablation, RunConfig
from ..settings import revalidate
from .dataset_io import read_dataset
from .evaluation import CSV_COLUMNS, append_csv, evaluate, report_rows, write_report
from .trainer import fit

logger = structlog.get_logger(__name__)

SWEEP_RESULTS = "sweep_results.csv"
SWEEP_COLUMNS = ["sweep_key", "sweep_value", "seed"] + CSV_COLUMNS

ABLATION_GRID: Dict[str, List[Ablation]] = {
    "baseline": [Ablation.NO_CCL, Ablation.NO_LCF, Ablation.NO_RHIC],
    "ccl": [Ablation.NO_LCF, Ablation.NO_RHIC],
    "ccl_lcf": [Ablation.NO_RHIC],
    "ccl_rhic": [Ablation.NO_LCF],
    "full": [],
    "no_language": [Ablation.NO_LANGUAGE],
}

SWEEP_KEYS = ("lambda", "ratio", "ablation", "seed")


@dataclass
class SweepPoint:
    key: str
    value: str
    seed: int
    config: RunConfig

    @property
    def label(self) -> str:
        return f"{self.key}_{self.value.replace(':', '-')}_seed{self.seed}"


# ================================
# SWEEP SPECS
# ================================

def parse_range(text: str) -> List[float]:
    """``start..stop:step`` inclusive of ``stop``"""
    try:
        bounds, step_text = text.split(":")
        start_text, stop_text = bounds.split("..")
        start, stop, step = float(start_text), float(stop_text), float(step_text)
    except ValueError as e:
        raise ConfigError(f"range must look like 'start..stop:step', got {text!r}") from e
    if step <= 0 or stop < start:
        raise ConfigError(f"empty range {text!r}")
    count = int(round((stop - start) / step)) + 1
    return [float(v) for v in np.round(start + step * np.arange(count), 10)]


def _format(value: float) -> str:
    return f"{value:g}"


def parse_sweep(spec: str) -> Tuple[str, List[str]]:
    """``key=values`` into the key and its list of string values"""
    key, sep, values = spec.partition("=")
    key = key.strip()
    if not sep or not values.strip():
        raise ConfigError(f"sweep must look like 'key=values', got {spec!r}")
    if key not in SWEEP_KEYS:
        raise ConfigError(f"unknown sweep key {key!r}; expected one of {list(SWEEP_KEYS)}")

    if key == "lambda":
        if ".." in values:
            return key, [_format(v) for v in parse_range(values)]
        try:
            return key, [_format(float(v)) for v in values.split(",")]
        except ValueError as e:
            raise ConfigError(f"lambda values must be numbers, got {values!r}") from e
    if key == "seed":
        if ".." in values:
            start, _, stop = values.partition("..")
            return key, [str(s) for s in range(int(start), int(stop) + 1)]
        return key, [str(int(v)) for v in values.split(",")]

    items = [v.strip() for v in values.split(",") if v.strip()]
    if key == "ablation":
        unknown = [v for v in items if v not in ABLATION_GRID]
        if unknown:
            raise ConfigError(f"unknown ablation variants {unknown}; expected {sorted(ABLATION_GRID)}")
    return key, items


def point_config(base: RunConfig, key: str, value: str, seed: int, out_dir: Path) -> RunConfig:
    overrides: Dict[str, Dict] = {"train": {"seed": seed, "output_dir": str(out_dir)}}
    if key == "lambda":
        overrides["hyper"] = {"lam": float(value)}
    elif key == "ratio":
        overrides["contrastive"] = {"ratio": value}
    elif key == "ablation":
        overrides["hyper"] = base.hyper.with_ablations(ABLATION_GRID[value]).model_dump(mode="json")
    return revalidate(base, overrides)


def build_points(base: RunConfig, sweep: Optional[str] = None, seeds: Sequence[int] = ()) -> List[SweepPoint]:
    """Cross product of sweep values and seeds, all validated up front"""
    seeds = list(seeds) or [base.train.seed]
    root = Path(base.train.output_dir)
    if sweep is None:
        key, values = "seed", [str(s) for s in seeds]
    else:
        key, values = parse_sweep(sweep)

    points = []
    for value in values:
        for seed in ([int(value)] if key == "seed" else seeds):
            point = SweepPoint(key=key, value=value, seed=seed, config=base)
            point.config = point_config(base, key, value, seed, root / point.label)
            points.append(point)
    return points


# ================================
# EXECUTION
# ================================

def run_point(point: SweepPoint) -> List[Dict]:
    """Train, evaluate on the validation split and return the CSV rows"""
    config = point.config
    logger.info("Sweep point started", key=point.key, value=point.value, seed=point.seed)
    best = fit(config)
    val_set = read_dataset(Path(config.data.path) / "val")
    report = evaluate(best, val_set, run_id=point.label, n_jobs=config.eval.n_jobs)
    write_report(report, config.train.output_dir)
    return [{"sweep_key": point.key, "sweep_value": point.value, "seed": point.seed, **row}
            for row in report_rows(report)]


def run_sweep(points: Sequence[SweepPoint], results_dir: Path, n_jobs: int = 1) -> Path:
    """Run every point, sequentially or with ``n_jobs`` worker processes"""
    if n_jobs > 1:
        batches = Parallel(n_jobs=n_jobs)(delayed(run_point)(p) for p in points)
    else:
        batches = [run_point(p) for p in points]
    rows = [row for batch in batches for row in batch]
    path = append_csv(rows, Path(results_dir) / SWEEP_RESULTS, SWEEP_COLUMNS)
    logger.info("Sweep finished", n_points=len(points), results=str(path))
    return path
