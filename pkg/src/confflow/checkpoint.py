"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    8 bytes   magic b"CFLOWCKP"
    uint32    format version
    uint32    header length H
    H bytes   header, canonical JSON (sorted keys, no whitespace, UTF-8)
    ...       body: float64 little-endian arrays, back to back

The header lists every tensor as ``[name, shape]`` in body order: all
parameters, then (if present) the AdamW first moments and second moments in
the same order. It also carries a CRC32 of the body, so truncation and bit
rot are detected on load. Nothing time-dependent is stored; two saves of the
same state are byte-identical.
"""

import io
import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .equinet import ModelConfig, ModelParams
from .errors import CheckpointError
from .flowrt import OptimState
from .irreps import CONVENTION

MAGIC = b"CFLOWCKP"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sII")


@dataclass
class Checkpoint:
    params: ModelParams
    opt_state: OptimState = None
    step: int = 0
    rng_state: dict = field(default_factory=dict)
    dataset_hash: str = ""
    train_config: dict = None
    convention: str = CONVENTION
    format_version: int = FORMAT_VERSION

    @property
    def model_config(self):
        return self.params.config


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode()


def _body_arrays(ckpt):
    arrays = list(ckpt.params.tensors.items())
    if ckpt.opt_state is not None:
        names = ckpt.params.names()
        arrays += [(f"m/{k}", ckpt.opt_state.m[k]) for k in names]
        arrays += [(f"v/{k}", ckpt.opt_state.v[k]) for k in names]
    return arrays


def dumps(ckpt):
    arrays = _body_arrays(ckpt)
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    header = {
        "format_version": ckpt.format_version,
        "convention": ckpt.convention,
        "model_config": ckpt.params.config.to_dict(),
        "train_config": ckpt.train_config,
        "step": int(ckpt.step),
        "optim_step": None if ckpt.opt_state is None else int(ckpt.opt_state.step),
        "rng_state": ckpt.rng_state,
        "dataset_hash": ckpt.dataset_hash,
        "tensors": [[name, list(np.shape(a))] for name, a in arrays],
        "body_bytes": len(body),
        "body_crc32": zlib.crc32(body),
    }
    head = _canonical(header)
    return _PREFIX.pack(MAGIC, ckpt.format_version, len(head)) + head + body


def save_checkpoint(ckpt, sink):
    """Write to a path or a binary file object."""
    data = dumps(ckpt)
    if isinstance(sink, (str, bytes)) or hasattr(sink, "__fspath__"):
        with open(sink, "wb") as fh:
            fh.write(data)
    else:
        sink.write(data)


def loads(data):
    data = bytes(data)
    if len(data) < _PREFIX.size:
        raise CheckpointError("truncated checkpoint: missing fixed header")
    magic, version, head_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"not a checkpoint (bad magic {magic!r})")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} is not supported (this build reads version {FORMAT_VERSION})"
        )
    start = _PREFIX.size
    if len(data) < start + head_len:
        raise CheckpointError("truncated checkpoint: header incomplete")
    try:
        header = json.loads(data[start : start + head_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    body = data[start + head_len :]
    if len(body) < header["body_bytes"]:
        raise CheckpointError(
            f"truncated checkpoint: body has {len(body)} of {header['body_bytes']} bytes"
        )
    if len(body) > header["body_bytes"]:
        raise CheckpointError("trailing bytes after checkpoint body")
    if zlib.crc32(body) != header["body_crc32"]:
        raise CheckpointError("checkpoint body checksum mismatch")
    if header["convention"] != CONVENTION:
        raise CheckpointError(
            f"irreps convention {header['convention']!r} differs from this build's {CONVENTION!r}"
        )

    tensors, offset = {}, 0
    for name, shape in header["tensors"]:
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(body, dtype="<f8", count=n, offset=offset).reshape(shape)
        tensors[name] = arr.astype(np.float64)
        offset += 8 * n
    config = ModelConfig.from_dict(header["model_config"])
    params = ModelParams(config, {k: a for k, a in tensors.items() if "/" not in k})
    opt = None
    if header["optim_step"] is not None:
        names = params.names()
        opt = OptimState(
            {k: tensors[f"m/{k}"] for k in names},
            {k: tensors[f"v/{k}"] for k in names},
            header["optim_step"],
        )
    return Checkpoint(
        params=params,
        opt_state=opt,
        step=header["step"],
        rng_state=header["rng_state"],
        dataset_hash=header["dataset_hash"],
        train_config=header["train_config"],
        convention=header["convention"],
        format_version=version,
    )


def load_checkpoint(source):
    """Read from a path or a binary file object."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "rb") as fh:
            return loads(fh.read())
    if isinstance(source, io.BytesIO):
        return loads(source.getvalue())
    return loads(source.read())
