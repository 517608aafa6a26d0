"""
Tests for the segmentation metrics, the evaluator and report writing
"""
import json

import numpy as np
import pandas as pd
import pytest

from src.exceptions import ConfigMismatchError, DimensionError, DomainError, EmptyInputError
from src.schemas import SampleResult
from src.services.dataset_io import read_dataset, write_dataset
from src.services.evaluation import (
    CSV_COLUMNS,
    REPORT_CSV,
    REPORT_JSON,
    SUBSET_ALL,
    Evaluator,
    aggregate,
    empty_predictor,
    evaluate,
    load_model,
    oracle_predictor,
    write_report,
)
from src.services.metrics import MAP_THRESHOLDS, binarize, iou, map_range, p_at_table, precision_at
from src.services.synthgen import generate_dataset
from src.services.trainer import Trainer

IOUS = [0.55, 0.72, 0.91]


@pytest.fixture(scope="module")
def val_set(tiny_dataset_root):
    return read_dataset(tiny_dataset_root / "val")


class TestMetrics:
    """Binarisation, IoU and precision"""

    def test_binarize_is_strict(self):
        """Pixels equal to beta * max stay background"""
        np.testing.assert_array_equal(binarize(np.array([0.5, 0.8, 1.0]), 0.8), [False, False, True])

    def test_binarize_relative_to_max(self):
        """The threshold follows the map's own maximum"""
        np.testing.assert_array_equal(binarize(np.array([0.1, 0.2, 0.25]), 0.8), [False, False, True])

    def test_binarize_zero_map(self):
        """An all-zero map predicts nothing"""
        assert not binarize(np.zeros((3, 3)), 0.8).any()

    def test_beta_range(self):
        """beta lies in (0, 1]"""
        with pytest.raises(DomainError):
            binarize(np.ones(2), 0.0)

    def test_iou(self):
        """One shared pixel out of two predicted"""
        pred = np.array([[1, 1], [0, 0]], dtype=bool)
        gt = np.array([[1, 0], [0, 0]], dtype=bool)
        assert iou(pred, gt) == pytest.approx(0.5)
        assert iou(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0
        with pytest.raises(DimensionError):
            iou(pred, np.zeros((3, 3)))

    def test_precision_at(self):
        """Fraction strictly above the threshold"""
        assert precision_at(IOUS, 0.7) == pytest.approx(2 / 3)
        assert precision_at(IOUS, 0.91) == 0.0
        assert p_at_table(IOUS) == pytest.approx({"0.5": 1.0, "0.6": 2 / 3, "0.7": 2 / 3, "0.8": 1 / 3, "0.9": 1 / 3})

    def test_map(self):
        """Ten thresholds from 0.50 to 0.95 average to 0.5 here"""
        assert len(MAP_THRESHOLDS) == 10
        assert MAP_THRESHOLDS[0] == 0.5 and MAP_THRESHOLDS[-1] == 0.95
        assert map_range(IOUS) == pytest.approx(0.5)

    @pytest.mark.parametrize("seed", range(5))
    def test_precision_nonincreasing_in_threshold(self, seed):
        """Raising K never raises P@K"""
        ious = np.random.default_rng(seed).random(17)
        precisions = [precision_at(ious, k) for k in np.linspace(0.0, 1.0, 41)]
        assert all(a >= b for a, b in zip(precisions, precisions[1:]))
        table = p_at_table(ious)
        assert list(table.values()) == sorted(table.values(), reverse=True)

    @pytest.mark.parametrize("seed", range(5))
    def test_map_matches_double_loop(self, seed):
        """mAP is the mean over thresholds and samples of IoU > t"""
        ious = np.random.default_rng(seed).random(23)
        hits = 0
        for t in MAP_THRESHOLDS:
            for value in ious:
                hits += value > t
        assert map_range(ious) == pytest.approx(hits / (len(MAP_THRESHOLDS) * len(ious)))

    def test_empty_input(self):
        """No samples, no metric"""
        with pytest.raises(EmptyInputError):
            precision_at([], 0.5)
        with pytest.raises(EmptyInputError):
            map_range([])

    def test_overall_and_mean_differ(self):
        """Overall IoU pools pixels while mean IoU averages samples"""
        samples = [
            SampleResult(clip_dir="a", referent_id=1, intersection=90, union=100, iou=0.9),
            SampleResult(clip_dir="b", referent_id=1, intersection=1, union=10, iou=0.1),
        ]
        metrics = aggregate(samples, SUBSET_ALL)
        assert metrics.mean_iou == pytest.approx(0.5)
        assert metrics.overall_iou == pytest.approx(91 / 110)
        assert metrics.n_samples == 2


class TestEvaluator:
    """Scoring whole datasets"""

    def test_oracle_scores_one(self, val_set):
        """Ground truth predictions are perfect"""
        report = Evaluator(beta=0.8).evaluate_predictor(val_set, oracle_predictor, run_id="oracle")
        assert report.overall_iou == 1.0
        assert report.mean_iou == 1.0
        assert report.map_50_95 == 1.0
        assert len(report.ious) == len(val_set.samples())

    def test_empty_prediction_scores_zero(self, val_set):
        """Predicting nothing overlaps nothing"""
        report = Evaluator(beta=0.8).evaluate_predictor(val_set, empty_predictor)
        assert report.mean_iou == 0.0
        assert report.p_at["0.5"] == 0.0

    def test_threads_match_serial(self, val_set):
        """Concurrent scoring gives the same report"""
        serial = Evaluator(beta=0.8).evaluate_predictor(val_set, oracle_predictor)
        threaded = Evaluator(beta=0.8, n_jobs=2).evaluate_predictor(val_set, oracle_predictor)
        assert threaded.ious == serial.ious

    def test_discrimination_subset(self, val_set):
        """Confusable clips get their own subset"""
        report = Evaluator(beta=0.8).evaluate_predictor(val_set, oracle_predictor)
        n_confusable = sum(len(r.sentences) for r in val_set.clips if r.confusable)
        if n_confusable:
            assert report.subsets["discrimination"].n_samples == n_confusable
        else:
            assert set(report.subsets) == {SUBSET_ALL}

    def test_checkpoint_evaluation(self, tiny_config, val_set):
        """A fresh model scores something in [0, 1]"""
        report = evaluate(Trainer(tiny_config).snapshot(), val_set, run_id="untrained")
        assert 0.0 <= report.mean_iou <= 1.0
        assert report.beta == tiny_config.hyper.beta

    def test_untrained_model_is_poor(self, tiny_config, tmp_path):
        """Freshly initialised weights stay far from the referred objects"""
        data = tiny_config.data.model_copy(update={"path": tmp_path / "toy", "n_val": 8})
        write_dataset(generate_dataset(data, "val"), data.path / "val")
        dataset = read_dataset(data.path / "val")

        checkpoint = Trainer(tiny_config).snapshot()
        config, _, params = load_model(checkpoint)
        assert config.train.seed == tiny_config.train.seed
        assert params.names() == Trainer(tiny_config).params.names()

        report = evaluate(checkpoint, dataset, run_id="untrained")
        assert report.mean_iou < 0.2

    def test_frame_size_mismatch(self, tiny_config, val_set):
        """A checkpoint trained on other frames is refused"""
        checkpoint = Trainer(tiny_config).snapshot()
        checkpoint.config["data"]["frame_size"] = 64
        with pytest.raises(ConfigMismatchError):
            evaluate(checkpoint, val_set)


class TestReports:
    """JSON and CSV output"""

    def test_write_report(self, val_set, tmp_path):
        """JSON holds the report, CSV gains one row per subset and run"""
        report = Evaluator(beta=0.8).evaluate_predictor(val_set, oracle_predictor, run_id="oracle")
        json_path, csv_path = write_report(report, tmp_path)
        write_report(report, tmp_path)

        assert json_path.name == REPORT_JSON and csv_path.name == REPORT_CSV
        assert json.loads(json_path.read_text())["mean_iou"] == 1.0
        table = pd.read_csv(csv_path)
        assert list(table.columns) == CSV_COLUMNS
        assert len(table) == 2 * len(report.subsets)
        assert (table["run_id"] == "oracle").all()
        assert table.loc[table["subset"] == SUBSET_ALL, "p90"].tolist() == [1.0, 1.0]
