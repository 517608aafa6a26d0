"""
Tests for the training engine: steps, ablations, the epoch loop and resuming
"""
import math

import numpy as np
import pandas as pd
import pytest

from src.exceptions import OutputError
from src.services.checkpoint_service import load_checkpoint
from src.services.dataset_io import read_dataset
from src.services.trainer import (
    BEST_CHECKPOINT,
    LAST_CHECKPOINT,
    LOG_COLUMNS,
    TRAIN_LOG,
    Trainer,
    epoch_checkpoint_name,
    fit,
)


def _with(config, section: str, **update):
    return config.model_copy(update={section: getattr(config, section).model_copy(update=update)})


@pytest.fixture(scope="module")
def train_set(tiny_dataset_root):
    return read_dataset(tiny_dataset_root / "train")


class TestTrainStep:
    """One optimisation step"""

    def test_step_moves_parameters(self, tiny_config, train_set):
        """A step changes the weights and reports finite losses"""
        trainer = Trainer(tiny_config)
        before = {name: t.data.copy() for name, t in trainer.params.items()}
        metrics = trainer.train_step(train_set.samples()[:2])

        assert metrics.n_samples + metrics.n_skipped == 2
        assert metrics.n_samples >= 1
        assert math.isfinite(metrics.loss) and metrics.loss > 0.0
        assert metrics.loss == pytest.approx(metrics.seg_loss + tiny_config.hyper.lam * metrics.contrastive_loss,
                                             rel=1e-4)
        assert any(not np.array_equal(before[name], t.data) for name, t in trainer.params.items())

    def test_repeated_steps_lower_the_loss(self, tiny_config, train_set):
        """A few steps on one fixed batch fit it better than the initial weights"""
        trainer = Trainer(_with(tiny_config, "hyper", lr=1e-2))
        batch = train_set.samples()[:2]
        first = trainer.compute_batch_loss(batch, trainer.params, epoch=0).total.item()
        for _ in range(5):
            trainer.train_step(batch, epoch=0)
        last = trainer.compute_batch_loss(batch, trainer.params, epoch=0).total.item()
        assert math.isfinite(last)
        assert last < first

    def test_contrastive_ablation(self, tiny_config, train_set):
        """Without the contrastive term L = L_s"""
        trainer = Trainer(_with(tiny_config, "hyper", use_ccl=False))
        losses = trainer.compute_batch_loss(train_set.samples()[:2], trainer.params)
        assert losses.contrastive is None
        assert losses.total.item() == losses.seg.item()

    def test_rhic_warmup(self, tiny_config):
        """Hard selection starts after the warm-up epochs"""
        trainer = Trainer(tiny_config)
        assert not trainer.rhic_active(0)
        assert trainer.rhic_active(1)
        assert not Trainer(_with(tiny_config, "hyper", use_rhic=False)).rhic_active(5)

    def test_same_seed_same_initialisation(self, tiny_config):
        """Initial weights depend only on the training seed"""
        a, b = Trainer(tiny_config), Trainer(tiny_config)
        for name, tensor in a.params.items():
            np.testing.assert_array_equal(tensor.data, b.params[name].data)


@pytest.mark.slow
class TestFit:
    """The epoch loop"""

    def test_outputs(self, tiny_config):
        """Every epoch writes a log row and a checkpoint"""
        best = fit(tiny_config)
        out = tiny_config.train.output_dir

        log = pd.read_csv(out / TRAIN_LOG, sep="\t")
        assert list(log.columns) == LOG_COLUMNS
        assert log["epoch"].tolist() == [1, 2]
        assert log["lr"].iloc[0] == pytest.approx(tiny_config.hyper.lr)
        assert log["val_mean_iou"].between(0.0, 1.0).all()

        for name in (epoch_checkpoint_name(1), epoch_checkpoint_name(2), BEST_CHECKPOINT, LAST_CHECKPOINT):
            assert (out / name).is_file()
        assert load_checkpoint(out / LAST_CHECKPOINT).epoch == 2
        assert best.epoch in (1, 2)
        assert 0.0 <= best.metrics["val_mean_iou"] <= 1.0

    def test_resume_matches_uninterrupted_run(self, tiny_config, tmp_path):
        """Stopping after one epoch and resuming reproduces the two-epoch run"""
        straight = _with(tiny_config, "train", output_dir=tmp_path / "straight")
        fit(straight)

        split = _with(tiny_config, "train", output_dir=tmp_path / "split", epochs=1)
        fit(split)
        resumed = _with(split, "train", epochs=2)
        fit(resumed, resume_from=load_checkpoint(tmp_path / "split" / LAST_CHECKPOINT))

        a = load_checkpoint(tmp_path / "straight" / LAST_CHECKPOINT)
        b = load_checkpoint(tmp_path / "split" / LAST_CHECKPOINT)
        assert b.epoch == 2
        for name, array in a.params.items():
            np.testing.assert_array_equal(array, b.params[name])
        assert len(pd.read_csv(tmp_path / "split" / TRAIN_LOG, sep="\t")) == 2

    def test_zero_epochs(self, tiny_config):
        """An empty budget still writes the initial weights"""
        best = fit(_with(tiny_config, "train", epochs=0))
        assert best.epoch == 0
        assert (tiny_config.train.output_dir / BEST_CHECKPOINT).is_file()


class TestOutputErrors:
    """Unwritable run directories"""

    def test_output_dir_is_a_file(self, tiny_config, train_set, tmp_path):
        """A run directory blocked by a regular file is an output error with exit code 1"""
        blocker = tmp_path / "taken"
        blocker.write_text("not a directory", encoding="utf-8")
        trainer = Trainer(_with(tiny_config, "train", output_dir=blocker))
        with pytest.raises(OutputError) as excinfo:
            trainer.fit(train_set)
        assert excinfo.value.exit_code == 1
        assert excinfo.value.path == str(blocker)
        assert isinstance(excinfo.value.__cause__, OSError)
