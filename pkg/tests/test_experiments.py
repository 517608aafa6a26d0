"""
Tests for sweep parsing, the ablation grid and sweep execution
"""
import pandas as pd
import pytest

from src.exceptions import ConfigError
from src.services.experiments import (
    ABLATION_GRID,
    SWEEP_COLUMNS,
    SWEEP_RESULTS,
    build_points,
    parse_range,
    parse_sweep,
    run_sweep,
)


class TestSweepSpecs:
    """key=values strings"""

    def test_range(self):
        """Ranges include both ends"""
        values = parse_range("0.1..1.0:0.1")
        assert len(values) == 10
        assert values[0] == 0.1 and values[2] == 0.3 and values[-1] == 1.0

    @pytest.mark.parametrize("text", ["0.1..1.0", "1.0..0.1:0.1", "0.1..1.0:0", "a..b:c"])
    def test_bad_range(self, text):
        """Malformed or empty ranges are refused"""
        with pytest.raises(ConfigError):
            parse_range(text)

    def test_lambda_sweep(self):
        """lambda values are formatted compactly"""
        key, values = parse_sweep("lambda=0.1..1.0:0.1")
        assert key == "lambda"
        assert values == ["0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9", "1"]
        assert parse_sweep("lambda=0.5,0.8") == ("lambda", ["0.5", "0.8"])

    def test_seed_sweep(self):
        """Seeds come as a range or a list"""
        assert parse_sweep("seed=0..2") == ("seed", ["0", "1", "2"])
        assert parse_sweep("seed=4,7") == ("seed", ["4", "7"])

    def test_ratio_and_ablation(self):
        """Ratios and ablation variants are lists"""
        assert parse_sweep("ratio=1:1,1:3") == ("ratio", ["1:1", "1:3"])
        assert parse_sweep("ablation=baseline, full") == ("ablation", ["baseline", "full"])

    @pytest.mark.parametrize("spec", ["lambda", "depth=1,2", "ablation=everything", "lambda=high"])
    def test_bad_sweeps(self, spec):
        """Unknown keys, values and shapes are configuration errors"""
        with pytest.raises(ConfigError):
            parse_sweep(spec)


class TestPoints:
    """Expanding sweeps into validated run configurations"""

    def test_ablation_grid(self, tiny_config):
        """Each variant switches the documented components off"""
        points = {p.value: p for p in build_points(tiny_config, "ablation=" + ",".join(ABLATION_GRID))}
        baseline, full = points["baseline"].config.hyper, points["full"].config.hyper
        assert (baseline.use_ccl, baseline.use_lcf, baseline.use_rhic) == (False, False, False)
        assert (full.use_ccl, full.use_lcf, full.use_rhic, full.use_language) == (True, True, True, True)
        assert points["ccl_rhic"].config.hyper.use_rhic and not points["ccl_rhic"].config.hyper.use_lcf
        assert not points["no_language"].config.hyper.use_language

    def test_output_directories(self, tiny_config):
        """Each point trains in its own directory below train.output_dir"""
        points = build_points(tiny_config, "ratio=1:1,1:3")
        root = tiny_config.train.output_dir
        assert [p.config.train.output_dir for p in points] == [root / "ratio_1-1_seed0", root / "ratio_1-3_seed0"]
        assert points[0].config.contrastive.ratio == (1, 1)

    def test_cross_product_with_seeds(self, tiny_config):
        """Sweep values times seeds"""
        points = build_points(tiny_config, "lambda=0.2,0.4", seeds=[0, 1])
        assert [(p.value, p.seed) for p in points] == [("0.2", 0), ("0.2", 1), ("0.4", 0), ("0.4", 1)]
        assert points[2].config.hyper.lam == 0.4
        assert points[3].config.train.seed == 1

    def test_seeds_only(self, tiny_config):
        """Without a sweep every seed is its own point"""
        points = build_points(tiny_config, seeds=[3, 5])
        assert [p.label for p in points] == ["seed_3_seed3", "seed_5_seed5"]


@pytest.mark.slow
class TestRunSweep:
    """Executing a small sweep end to end"""

    def test_results_file(self, tiny_config):
        """Each point adds its report rows to sweep_results.csv"""
        config = tiny_config.model_copy(update={"train": tiny_config.train.model_copy(update={"epochs": 1})})
        points = build_points(config, "ablation=baseline,full")
        path = run_sweep(points, config.train.output_dir)

        assert path.name == SWEEP_RESULTS
        table = pd.read_csv(path)
        assert list(table.columns) == SWEEP_COLUMNS
        assert set(table["sweep_value"]) == {"baseline", "full"}
        assert table["mean_iou"].between(0.0, 1.0).all()
        for point in points:
            assert (point.config.train.output_dir / "eval_report.json").is_file()
