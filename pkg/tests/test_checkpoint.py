import struct

import numpy as np
import pytest

from conftest import tiny_dataset
from desgrada.checkpoint import (
    MAGIC,
    CheckpointError,
    from_bytes,
    load_checkpoint,
    save_checkpoint,
    to_bytes,
)
from desgrada.trainer import TrainConfig, evaluate, train


@pytest.fixture(scope="module")
def trained():
    src = tiny_dataset(0, count=6)
    tgt = tiny_dataset(1, count=6, tag="target")
    model, _ = train(TrainConfig(hidden_dim=8, epochs=2, batch_size=3, pseudo_label_start_epoch=1), src, tgt)
    return model, tgt


def test_round_trip_is_bit_exact(trained, tmp_path):
    model, tgt = trained
    save_checkpoint(model, tmp_path / "m.ckpt", {"note": "x"})
    back, extra = load_checkpoint(tmp_path / "m.ckpt")
    assert extra == {"note": "x"}
    assert to_bytes(back, extra) == (tmp_path / "m.ckpt").read_bytes()
    for (n1, p1), (n2, p2) in zip(model.named_parameters(), back.named_parameters()):
        assert n1 == n2
        np.testing.assert_array_equal(p1.value, p2.value)
    assert back.table == model.table
    assert evaluate(back, tgt).accuracy == evaluate(model, tgt).accuracy
    np.testing.assert_array_equal(evaluate(back, tgt).logits, evaluate(model, tgt).logits)


def test_save_leaves_no_temporary_files(trained, tmp_path):
    save_checkpoint(trained[0], tmp_path / "m.ckpt")
    assert [p.name for p in tmp_path.iterdir()] == ["m.ckpt"]


def test_rejects_foreign_bytes():
    with pytest.raises(CheckpointError, match="not a desgrada checkpoint"):
        from_bytes(b"PK\x03\x04 something else")
    with pytest.raises(CheckpointError):
        from_bytes(b"")


def test_rejects_other_versions(trained):
    data = to_bytes(trained[0])
    (n,) = struct.unpack_from("<Q", data, len(MAGIC))
    start = len(MAGIC) + 8
    header = data[start:start + n].replace(b'"format_version":1', b'"format_version":9')
    with pytest.raises(CheckpointError, match="version 9"):
        from_bytes(data[:start] + header + data[start + n:])


def test_rejects_truncated_payload(trained):
    with pytest.raises(CheckpointError, match="payload"):
        from_bytes(to_bytes(trained[0])[:-8])
