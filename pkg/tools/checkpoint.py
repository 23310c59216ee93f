"""ATLS checkpoint container.

Layout (all integers little-endian):

    b"ATLS" | u8 version | u32 header length | JSON header (UTF-8)
    | f64 payloads in header order | u32 CRC-32 of everything before it

The header names every tensor with its shape and byte offset into the
payload block, plus the hyperparameters, variant tag, vocabulary hash and,
when present, the Adadelta settings and the indicator scaler.
"""

from __future__ import annotations

import json
import logging
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from config import CHECKPOINT_MAGIC, CHECKPOINT_VERSION, LOG_LEVEL
from core.data_store import atomic_write_bytes
from core.errors import CheckpointError, ChecksumError, UnsupportedVersionError
from core.indicators import IndicatorScaler
from core.model import AtLstmModel, build_variant
from core.schemas import Hyper
from tools.training import AdadeltaState

logger = logging.getLogger("atlstm.checkpoint")
logger.setLevel(getattr(logging, LOG_LEVEL.upper(), logging.INFO))

_PREFIX = struct.Struct("<4sBI")
_CRC = struct.Struct("<I")
_F64 = np.dtype("<f8")

_SQ_GRAD = "adadelta.sq_grad/"
_SQ_DELTA = "adadelta.sq_delta/"


@dataclass
class Checkpoint:
    model: AtLstmModel
    state: AdadeltaState | None
    header: dict

    @property
    def vocab_hash(self) -> str:
        return self.header.get("vocab_hash", "")


def _tensor_table(model: AtLstmModel, state: AdadeltaState | None) -> list[tuple[str, np.ndarray]]:
    table = [(name, t.data) for name, t in model.params.items()]
    if state is not None:
        table += [(_SQ_GRAD + n, a) for n, a in state.sq_grad.items()]
        table += [(_SQ_DELTA + n, a) for n, a in state.sq_delta.items()]
    return table


def save_checkpoint(
    model: AtLstmModel,
    state: AdadeltaState | None,
    path: str | Path,
    *,
    vocab_hash: str = "",
    extra: dict | None = None,
) -> Path:
    """Serialise parameters (and optimizer accumulators) to ``path`` atomically."""
    entries = []
    payloads = []
    offset = 0
    for name, array in _tensor_table(model, state):
        data = np.ascontiguousarray(array, dtype=_F64)
        entries.append({"name": name, "shape": list(data.shape), "offset": offset})
        payloads.append(data.tobytes())
        offset += data.nbytes

    header = {
        "variant": model.variant.value,
        "hyper": model.hyper.model_dump(),
        "vocab_size": model.vocab_size,
        "charset_size": model.charset_size,
        "seed": model.seed,
        "vocab_hash": vocab_hash,
        "tensors": entries,
        "payload_bytes": offset,
    }
    if model.indicator_scaler is not None:
        header["indicator_scaler"] = {
            "mean": model.indicator_scaler.mean.tolist(),
            "std": model.indicator_scaler.std.tolist(),
        }
    if state is not None:
        header["optimizer"] = {"rho": state.rho, "eps": state.eps, "lr": state.lr, "steps": state.steps}
    if extra:
        header["extra"] = extra

    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    body = _PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header_bytes)) + header_bytes + b"".join(payloads)
    blob = body + _CRC.pack(zlib.crc32(body) & 0xFFFFFFFF)
    path = atomic_write_bytes(path, blob)
    logger.info("[TRAIN] checkpoint written: %s (%d tensors, %d bytes)", path, len(entries), len(blob))
    return path


def read_header(blob: bytes, source: str = "") -> tuple[dict, memoryview]:
    """Validate container framing; return the header and the payload block.

    Checks run in order: magic, version, CRC, header, payload length.
    """
    if len(blob) < len(CHECKPOINT_MAGIC) or blob[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{source}: not an ATLS checkpoint (bad magic)")
    if len(blob) < _PREFIX.size + _CRC.size:
        raise ChecksumError(f"{source}: checkpoint truncated")
    _, version, header_len = _PREFIX.unpack_from(blob, 0)
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(
            f"{source}: checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )
    body, (stored_crc,) = blob[:-_CRC.size], _CRC.unpack_from(blob, len(blob) - _CRC.size)
    if zlib.crc32(body) & 0xFFFFFFFF != stored_crc:
        raise ChecksumError(f"{source}: CRC-32 mismatch (file corrupt or truncated)")

    start = _PREFIX.size
    if start + header_len > len(body):
        raise CheckpointError(f"{source}: header length {header_len} runs past the payload")
    try:
        header = json.loads(bytes(body[start:start + header_len]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: unreadable header: {exc}") from exc

    payload = memoryview(body)[start + header_len:]
    expected = sum(int(np.prod(e["shape"], dtype=np.int64)) * _F64.itemsize for e in header.get("tensors", []))
    if expected != len(payload):
        raise CheckpointError(
            f"{source}: shape table describes {expected} payload bytes, file holds {len(payload)}"
        )
    return header, payload


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Rebuild the model (and optimizer state, if saved) from ``path``."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    header, payload = read_header(path.read_bytes(), source=str(path))

    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        start = entry["offset"]
        chunk = payload[start:start + count * _F64.itemsize]
        if len(chunk) != count * _F64.itemsize:
            raise CheckpointError(f"{path}: tensor {entry['name']} runs past the payload")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=_F64).reshape(shape).astype(np.float64)

    try:
        hyper = Hyper.model_validate(header["hyper"])
    except (KeyError, ValidationError) as exc:
        raise CheckpointError(f"{path}: invalid hyperparameters in header: {exc}") from exc
    model = build_variant(
        header["variant"], hyper, int(header["vocab_size"]),
        charset_size=int(header["charset_size"]), seed=int(header["seed"]),
    )
    params = {n: a for n, a in arrays.items() if not n.startswith(("adadelta.",))}
    try:
        model.params.restore(params)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: parameters do not match the {header['variant']} layout: {exc}") from exc

    if "indicator_scaler" in header:
        scaler = header["indicator_scaler"]
        model.indicator_scaler = IndicatorScaler(np.asarray(scaler["mean"]), np.asarray(scaler["std"]))

    state = None
    if "optimizer" in header:
        opt = header["optimizer"]
        state = AdadeltaState(
            rho=opt["rho"], eps=opt["eps"], lr=opt["lr"], steps=opt["steps"],
            sq_grad={n[len(_SQ_GRAD):]: a for n, a in arrays.items() if n.startswith(_SQ_GRAD)},
            sq_delta={n[len(_SQ_DELTA):]: a for n, a in arrays.items() if n.startswith(_SQ_DELTA)},
        )
    return Checkpoint(model, state, header)
