import numpy as np
import pytest

from soundcl.checkpoint import CheckpointError, load_checkpoint, save_checkpoint


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {
        "conv1/w": rng.normal(size=(64, 128, 3)),
        "conv1/b": rng.normal(size=64),
        "scalar": np.array(3.141592653589793),
    }
    meta = {"model_kind": "classifier", "task_index": 3, "seed": 42}
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, arrays, meta)
    loaded, got_meta = load_checkpoint(path)
    assert got_meta["model_kind"] == "classifier"
    assert got_meta["task_index"] == 3
    assert got_meta["seed"] == 42
    assert got_meta["format_version"] == 1
    for name, arr in arrays.items():
        assert loaded[name].shape == arr.shape
        assert np.array_equal(loaded[name], arr)  # bit exact


def test_save_is_deterministic(tmp_path):
    arrays = {"w": np.arange(12, dtype=np.float64).reshape(3, 4)}
    meta = {"model_kind": "test", "task_index": 0, "seed": 0}
    save_checkpoint(tmp_path / "a.ckpt", arrays, meta)
    save_checkpoint(tmp_path / "b.ckpt", arrays, meta)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_corruption_detected(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, {"w": np.ones(4)}, {"model_kind": "t", "task_index": 0,
                                              "seed": 0})
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match=str(path)):
        load_checkpoint(path)


def test_not_a_checkpoint(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_truncation_detected(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, {"w": np.ones(100)}, {"model_kind": "t",
                                                "task_index": 0, "seed": 0})
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
