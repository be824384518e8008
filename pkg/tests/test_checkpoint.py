import struct

import numpy as np
import pytest

from ttcod.checkpoint import MAGIC, CheckpointError, dumps, load, loads, save
from ttcod.model import ModelConfig, ToyModel


def _model():
    return ToyModel.init(ModelConfig(image_size=32, channels=8, decoder_channels=4, variant="M3", mini_batch=4))


def test_roundtrip_bit_exact_with_frozen_flags(tmp_path):
    m = _model()
    save(tmp_path / "m.sttc", m.params, m.frozen)
    params, frozen = load(tmp_path / "m.sttc")
    assert frozen == m.frozen
    assert set(params) == set(m.params)
    for k, v in m.params.items():
        assert params[k].dtype == np.float32 and params[k].tobytes() == v.tobytes(), k
    assert dumps(params, frozen) == (tmp_path / "m.sttc").read_bytes()


def test_header_layout():
    blob = dumps({"b": np.zeros((2, 3), np.float32), "a": np.ones(1, np.float32)}, {"b"})
    assert blob[:4] == MAGIC
    assert struct.unpack_from("<II", blob, 4) == (1, 2)
    # entries sorted by name: "a" first, trainable, rank 1, dim 1, one float
    assert struct.unpack_from("<I", blob, 12) == (1,)
    assert blob[16:17] == b"a"
    assert struct.unpack_from("<BIQ", blob, 17) == (0, 1, 1)
    assert len(blob) == 12 + (4 + 1 + 5 + 8 + 4) + (4 + 1 + 5 + 16 + 24)


def test_scalar_entry_roundtrip():
    params, frozen = loads(dumps({"s": np.array(2.5, np.float32)}, []))
    assert params["s"].shape == () and params["s"] == 2.5 and frozen == frozenset()


def test_truncated_and_trailing_bytes_rejected():
    blob = dumps(_model().params, [])
    for cut in (3, 10, 20, len(blob) - 1):
        with pytest.raises(CheckpointError):
            loads(blob[:cut])
    with pytest.raises(CheckpointError, match="trailing"):
        loads(blob + b"\0")


def test_bad_magic_version_and_unknown_frozen():
    blob = dumps({"a": np.zeros(1, np.float32)}, [])
    with pytest.raises(CheckpointError, match="magic"):
        loads(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointError, match="version"):
        loads(blob[:4] + struct.pack("<I", 9) + blob[8:])
    with pytest.raises(CheckpointError):
        dumps({"a": np.zeros(1)}, ["b"])
