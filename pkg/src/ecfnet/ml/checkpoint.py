"""
"ECFCKPT1" checkpoint container.

Layout: the 8-byte magic, a little-endian u64 header length, a canonical JSON
header (config, tensor directory, optimizer scalars, rng position, payload
CRC32), then the float32 little-endian payloads in directory order.
"""
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from ..config import ModelConfig, flatten_config
from ..errors import CheckpointConfigMismatch, ChecksumError, DataFormatError
from ..utils.logger import get_logger
from ..utils.retry import durable_write
from .optim import OptimizerState

MAGIC = b"ECFCKPT1"
FORMAT_VERSION = 1
_LENGTH = struct.Struct("<Q")

logger = get_logger("checkpoint")


@dataclass
class Checkpoint:
    config: Dict[str, Any]
    params: Dict[str, np.ndarray]
    optimizer: OptimizerState
    epoch: int = 0
    step: int = 0
    rng: Dict[str, int] = field(default_factory=dict)
    config_hash: str = ""
    version: int = FORMAT_VERSION

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig.model_validate(self.config["model"])


def _canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _tensor_items(ckpt: Checkpoint) -> List[Tuple[str, np.ndarray]]:
    items = [(f"param/{name}", arr) for name, arr in ckpt.params.items()]
    items += [(f"adam_m/{name}", arr) for name, arr in ckpt.optimizer.m.items()]
    items += [(f"adam_v/{name}", arr) for name, arr in ckpt.optimizer.v.items()]
    return items


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    directory = []
    chunks = []
    offset = 0
    for name, arr in _tensor_items(ckpt):
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
        chunks.append(blob)
        offset += len(blob)
    payload = b"".join(chunks)
    opt = ckpt.optimizer
    header = {
        "version": ckpt.version,
        "config": ckpt.config,
        "config_hash": ckpt.config_hash,
        "tensors": directory,
        "optimizer": {"t": opt.t, "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps},
        "rng": ckpt.rng,
        "epoch": ckpt.epoch,
        "step": ckpt.step,
        "payload_bytes": len(payload),
        "payload_crc32": zlib.crc32(payload) & 0xFFFFFFFF,
    }
    head = _canonical_json(header)
    return MAGIC + _LENGTH.pack(len(head)) + head + payload


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    prefix = len(MAGIC) + _LENGTH.size
    if len(data) < prefix:
        raise DataFormatError(f"checkpoint {source} is truncated", path=source)
    if data[:len(MAGIC)] != MAGIC:
        raise DataFormatError(f"{source} is not an ECFCKPT1 checkpoint", path=source)
    (head_len,) = _LENGTH.unpack_from(data, len(MAGIC))
    if len(data) < prefix + head_len:
        raise DataFormatError(f"checkpoint {source} is truncated inside its header", path=source)
    try:
        header = json.loads(data[prefix:prefix + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"checkpoint {source} has a corrupt header: {exc}", path=source) from exc

    if header.get("version") != FORMAT_VERSION:
        raise CheckpointConfigMismatch("version", FORMAT_VERSION, header.get("version"))
    payload = data[prefix + head_len:]
    if len(payload) != header["payload_bytes"]:
        raise DataFormatError(f"checkpoint {source} is truncated: payload {len(payload)} of "
                              f"{header['payload_bytes']} bytes", path=source)
    if zlib.crc32(payload) & 0xFFFFFFFF != header["payload_crc32"]:
        raise ChecksumError(f"checkpoint {source} failed its CRC32 check", path=source)

    groups: Dict[str, Dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
    for entry in header["tensors"]:
        kind, _, name = entry["name"].partition("/")
        if kind not in groups:
            raise DataFormatError(f"checkpoint {source} has unknown tensor kind {kind!r}", path=source)
        blob = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(blob, dtype="<f4").astype(np.float32).reshape(entry["shape"])
        groups[kind][name] = arr

    opt = header["optimizer"]
    optimizer = OptimizerState(lr=opt["lr"], beta1=opt["beta1"], beta2=opt["beta2"], eps=opt["eps"],
                               t=opt["t"], m=groups["adam_m"], v=groups["adam_v"])
    return Checkpoint(config=header["config"], params=groups["param"], optimizer=optimizer,
                      epoch=header["epoch"], step=header["step"], rng=header["rng"],
                      config_hash=header.get("config_hash", ""), version=header["version"])


def check_model_config(ckpt: Checkpoint, expected: ModelConfig) -> None:
    """Raise on the first model field that differs from ``expected``"""
    want = flatten_config(expected.model_dump(mode="json"))
    have = flatten_config(ckpt.config.get("model", {}))
    for key in sorted(set(want) | set(have)):
        if want.get(key) != have.get(key):
            raise CheckpointConfigMismatch(f"model.{key}", want.get(key), have.get(key))


@durable_write
def save_checkpoint(ckpt: Checkpoint, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(ckpt))
    tmp.replace(path)
    logger.debug("Checkpoint saved", path=str(path), step=ckpt.step, epoch=ckpt.epoch)
    return path


def load_checkpoint(path: Path, expected: Optional[ModelConfig] = None) -> Checkpoint:
    path = Path(path)
    ckpt = decode_checkpoint(path.read_bytes(), str(path))
    if expected is not None:
        check_model_config(ckpt, expected)
    return ckpt


def snapshot(params: Mapping[str, Any], optimizer: OptimizerState, config: Dict[str, Any], *,
             epoch: int, step: int, rng: Dict[str, int], config_hash: str) -> Checkpoint:
    """Copy live parameter values into a checkpoint"""
    values = {name: np.array(p.values, dtype=np.float32) for name, p in params.items()}
    opt = OptimizerState(lr=optimizer.lr, beta1=optimizer.beta1, beta2=optimizer.beta2, eps=optimizer.eps,
                         t=optimizer.t,
                         m={k: np.array(v, dtype=np.float32) for k, v in optimizer.m.items()},
                         v={k: np.array(v, dtype=np.float32) for k, v in optimizer.v.items()})
    return Checkpoint(config=config, params=values, optimizer=opt, epoch=epoch, step=step,
                      rng=dict(rng), config_hash=config_hash)
