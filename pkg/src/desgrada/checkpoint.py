"""Binary checkpoints: a JSON header followed by a little-endian float64 payload.

Layout::

    b"DSGRCKPT"  | uint64 LE header length | UTF-8 JSON header | float64 LE payload

The payload holds every parameter (in header order, C-contiguous) followed
by the threshold-table values and its default. Floats never pass through
JSON, so save/load round-trips are bit-exact.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .adapt import AttentionParams, ClassifierParams, DiscriminatorParams
from .graph import DegreeTable
from .spiking import LayerParams, LIFConfig, ThresholdTable

MAGIC = b"DSGRCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed checkpoint or unsupported format version."""


def _header(model, extra: dict | None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "feature_dim": model.feature_dim,
        "num_classes": model.num_classes,
        "hidden_dim": model.lif.hidden_dim,
        "layers": model.lif.layers,
        "discriminator_input": model.discriminator_input,
        "lif": dataclasses.asdict(model.lif),
        "params": [[name, list(node.value.shape)] for name, node in model.named_parameters()],
        "threshold_degrees": model.table.degrees.tolist(),
        "source_degrees": list(model.source_degrees.degrees),
        "source_degree_origin": model.source_degrees.origin,
        "extra": extra or {},
    }


def to_bytes(model, extra: dict | None = None) -> bytes:
    header = json.dumps(_header(model, extra), sort_keys=True, separators=(",", ":")).encode("utf-8")
    arrays = [node.value.ravel() for _, node in model.named_parameters()]
    arrays += [model.table.values, np.array([model.table.default])]
    payload = np.concatenate(arrays).astype("<f8").tobytes()
    return MAGIC + struct.pack("<Q", len(header)) + header + payload


def save_checkpoint(model, path, extra: dict | None = None) -> None:
    """Write atomically (temp file in the same directory, then rename)."""
    path = Path(path)
    data = to_bytes(model, extra)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_header(data: bytes) -> tuple[dict, int]:
    if len(data) < len(MAGIC) + 8 or not data.startswith(MAGIC):
        raise CheckpointError("not a desgrada checkpoint")
    (n,) = struct.unpack_from("<Q", data, len(MAGIC))
    start = len(MAGIC) + 8
    try:
        header = json.loads(data[start:start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"corrupt header: {err}") from err
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} unsupported (expected {FORMAT_VERSION})")
    return header, start + n


def from_bytes(data: bytes):
    """Rebuild a :class:`~desgrada.trainer.Model`; returns ``(model, extra)``."""
    from .trainer import Model

    header, offset = read_header(data)
    payload = np.frombuffer(data, dtype="<f8", offset=offset).astype(np.float64)
    shapes = [(name, tuple(shape)) for name, shape in header["params"]]
    n_thr = len(header["threshold_degrees"])
    expected = sum(int(np.prod(s)) for _, s in shapes) + n_thr + 1
    if payload.size != expected:
        raise CheckpointError(f"payload has {payload.size} values, header implies {expected}")
    values = {}
    pos = 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        values[name] = ad.param(payload[pos:pos + size].reshape(shape).copy(), name)
        pos += size
    thr = payload[pos:pos + n_thr]
    default = float(payload[pos + n_thr])
    try:
        layers = [LayerParams(values[f"layer{i}.weight"], values[f"layer{i}.bias"]) for i in range(header["layers"])]
        attention = AttentionParams(**{f.name: values[f"attention.{f.name}"] for f in dataclasses.fields(AttentionParams)})
        classifier = ClassifierParams(**{f.name: values[f"classifier.{f.name}"] for f in dataclasses.fields(ClassifierParams)})
        discriminator = DiscriminatorParams(
            **{f.name: values[f"discriminator.{f.name}"] for f in dataclasses.fields(DiscriminatorParams)})
    except KeyError as err:
        raise CheckpointError(f"missing parameter {err}") from err
    table = ThresholdTable(dict(zip(header["threshold_degrees"], thr.tolist())), default=default)
    model = Model(
        layers=layers,
        attention=attention,
        classifier=classifier,
        discriminator=discriminator,
        table=table,
        lif=LIFConfig(**header["lif"]),
        num_classes=header["num_classes"],
        feature_dim=header["feature_dim"],
        source_degrees=DegreeTable(tuple(header["source_degrees"]), header["source_degree_origin"]),
        discriminator_input=header["discriminator_input"],
    )
    return model, header["extra"]


def load_checkpoint(path):
    try:
        data = Path(path).read_bytes()
    except OSError as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err.strerror}") from None
    return from_bytes(data)
