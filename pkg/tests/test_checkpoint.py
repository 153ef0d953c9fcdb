import numpy as np
import pytest
import torch

from dualseg.checkpoint import (FORMAT_VERSION, load_container, load_module_tensors,
                                module_tensors, save_container)
from dualseg.errors import CorruptFileError, TopologyMismatchError, VersionMismatchError


def _tensors():
    rng = np.random.default_rng(0)
    return {
        "w": rng.standard_normal((3, 4)).astype(np.float32),
        "b": rng.standard_normal(7),
        "steps": np.array(42, np.int64),
        "bytes": rng.integers(0, 255, 16).astype(np.uint8),
    }


def test_round_trip_exact(tmp_path):
    path = tmp_path / "x.dsck"
    save_container(path, _tensors(), meta={"note": "hi"})
    header, loaded = load_container(path)
    assert header["meta"] == {"note": "hi"}
    assert header["version"] == FORMAT_VERSION
    for name, arr in _tensors().items():
        assert loaded[name].dtype == arr.dtype
        assert np.array_equal(loaded[name], arr)


def test_save_load_save_bitwise(tmp_path):
    p1, p2 = tmp_path / "a.dsck", tmp_path / "b.dsck"
    save_container(p1, _tensors(), meta={"k": 1})
    header, loaded = load_container(p1)
    save_container(p2, loaded, meta=header["meta"])
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic(tmp_path):
    path = tmp_path / "x.dsck"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(CorruptFileError, match="magic"):
        load_container(path)


def test_truncated_header(tmp_path):
    path = tmp_path / "x.dsck"
    save_container(path, _tensors())
    raw = path.read_bytes()
    path.write_bytes(raw[:20])
    with pytest.raises(CorruptFileError, match="header"):
        load_container(path)


def test_truncated_payload_names_tensor(tmp_path):
    path = tmp_path / "x.dsck"
    save_container(path, _tensors())
    raw = path.read_bytes()
    path.write_bytes(raw[:-10])
    with pytest.raises(CorruptFileError, match="truncated payload"):
        load_container(path)


def test_trailing_bytes(tmp_path):
    path = tmp_path / "x.dsck"
    save_container(path, _tensors())
    path.write_bytes(path.read_bytes() + b"junk")
    with pytest.raises(CorruptFileError, match="trailing"):
        load_container(path)


def test_version_mismatch(tmp_path):
    path = tmp_path / "x.dsck"
    save_container(path, _tensors(), version=FORMAT_VERSION + 1)
    with pytest.raises(VersionMismatchError):
        load_container(path)


def test_load_module_tensors_round_trip():
    torch.manual_seed(0)
    module = torch.nn.Linear(4, 3)
    saved = module_tensors(module)
    other = torch.nn.Linear(4, 3)
    load_module_tensors(other, saved)
    assert torch.equal(module.weight, other.weight)
    assert torch.equal(module.bias, other.bias)


def test_load_module_tensors_names_every_problem():
    module = torch.nn.Linear(4, 3)
    saved = module_tensors(module)
    saved["extra"] = np.zeros(2, np.float32)
    saved["weight"] = np.zeros((5, 5), np.float32)
    del saved["bias"]
    with pytest.raises(TopologyMismatchError) as err:
        load_module_tensors(module, saved, context="unit")
    message = str(err.value)
    assert "unexpected tensor 'extra'" in message
    assert "missing tensor 'bias'" in message
    assert "shape mismatch for 'weight'" in message
    assert message.startswith("unit:")
