"""
Tests for checkpoint storage
"""
import numpy as np
import pytest

from src.exceptions import ConfigMismatchError, FormatError, LoadError, OutputError
from src.models import ModelParams
from src.services.checkpoint_service import (
    MAGIC,
    Checkpoint,
    checkpoint_io,
    load_checkpoint,
    restore_params,
    save_checkpoint,
)
from src.services.dataset_io import read_dataset
from src.services.trainer import Trainer


@pytest.fixture
def checkpoint() -> Checkpoint:
    params = ModelParams()
    params.add("a.weight", np.arange(6, dtype=np.float32).reshape(2, 3))
    params.add("a.bias", np.array([0.5, -0.25], dtype=np.float32))
    return Checkpoint(
        params=params.state_dict(),
        config={"name": "tiny"},
        epoch=3,
        optimizer={"step": 12, "lr": 0.001},
        adam_m={"a.bias": np.array([0.1, 0.2], dtype=np.float32)},
        adam_v={"a.bias": np.array([0.01, 0.02], dtype=np.float32)},
        metrics={"val_mean_iou": 0.42},
    )


class TestCheckpointFormat:
    """Layout, round trips and corruption"""

    def test_round_trip_is_byte_identical(self, checkpoint, tmp_path):
        """save -> load -> save reproduces the file exactly"""
        first = save_checkpoint(checkpoint, tmp_path / "a.ckpt")
        second = save_checkpoint(load_checkpoint(first), tmp_path / "b.ckpt")
        assert first.read_bytes() == second.read_bytes()
        assert first.read_bytes().startswith(MAGIC)

    def test_contents(self, checkpoint, tmp_path):
        """Weights, moments and metadata come back unchanged"""
        loaded = load_checkpoint(save_checkpoint(checkpoint, tmp_path / "a.ckpt"))
        assert list(loaded.params) == ["a.weight", "a.bias"]
        np.testing.assert_array_equal(loaded.params["a.weight"], checkpoint.params["a.weight"])
        np.testing.assert_array_equal(loaded.adam_v["a.bias"], checkpoint.adam_v["a.bias"])
        assert loaded.epoch == 3
        assert loaded.optimizer == {"step": 12, "lr": 0.001}
        assert loaded.metrics == {"val_mean_iou": 0.42}

    def test_unwritable_target(self, checkpoint, tmp_path):
        """Saving below a regular file is an output error"""
        blocker = tmp_path / "taken"
        blocker.write_text("not a directory", encoding="utf-8")
        with pytest.raises(OutputError):
            save_checkpoint(checkpoint, blocker / "a.ckpt")

    def test_truncated_payload(self, checkpoint, tmp_path):
        """A short file is a format error"""
        path = save_checkpoint(checkpoint, tmp_path / "a.ckpt")
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_bad_magic(self, checkpoint, tmp_path):
        """Files from elsewhere are recognised by their first bytes"""
        path = save_checkpoint(checkpoint, tmp_path / "a.ckpt")
        path.write_bytes(b"NOTACKPT" + path.read_bytes()[len(MAGIC):])
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        """A missing checkpoint is a load error naming the path"""
        with pytest.raises(LoadError) as exc:
            load_checkpoint(tmp_path / "nope.ckpt")
        assert exc.value.path == str(tmp_path / "nope.ckpt")

    def test_direction(self, checkpoint, tmp_path):
        """checkpoint_io reads and writes by direction"""
        path = tmp_path / "a.ckpt"
        assert checkpoint_io(checkpoint, path, "write") is None
        assert checkpoint_io(None, path, "read").epoch == 3
        with pytest.raises(ValueError):
            checkpoint_io(checkpoint, path, "append")


class TestRestore:
    """Loading weights into a model"""

    def test_name_mismatch(self, checkpoint):
        """Parameter sets must agree"""
        params = ModelParams()
        params.add("a.weight", np.zeros((2, 3), dtype=np.float32))
        with pytest.raises(ConfigMismatchError):
            restore_params(checkpoint, params)

    def test_shape_mismatch(self, checkpoint):
        """Shapes must agree"""
        params = ModelParams()
        params.add("a.weight", np.zeros((3, 2), dtype=np.float32))
        params.add("a.bias", np.zeros(2, dtype=np.float32))
        with pytest.raises(ConfigMismatchError):
            restore_params(checkpoint, params)

    def test_trainer_state_survives_disk(self, tiny_config, tiny_dataset_root, tmp_path):
        """A trained snapshot restores weights and Adam moments exactly"""
        trainer = Trainer(tiny_config)
        trainer.train_step(read_dataset(tiny_dataset_root / "train").samples()[:1])
        path = save_checkpoint(trainer.snapshot(), tmp_path / "t.ckpt")

        other = Trainer(tiny_config)
        other.resume(load_checkpoint(path))
        assert other.optimizer.state.step == 1
        for name, tensor in trainer.params.items():
            np.testing.assert_array_equal(other.params[name].data, tensor.data)
        assert set(other.optimizer.state.m) == set(trainer.optimizer.state.m)
        for name, moment in trainer.optimizer.state.m.items():
            np.testing.assert_array_equal(other.optimizer.state.m[name], moment)
