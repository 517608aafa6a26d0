"""
Checkpoint Storage
8-byte magic, one-line JSON header, then little-endian float32 payloads in header order
"""
import json
import os
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import structlog

from ..exceptions import ConfigMismatchError, FormatError, LoadError, OutputError
from ..models import ModelParams

logger = structlog.get_logger(__name__)

MAGIC = b"RFCKPT01"
FORMAT_VERSION = 1
PAYLOAD_DTYPE = np.dtype("<f4")
MOMENT_PREFIXES = ("adam.m.", "adam.v.")

PathLike = Union[str, Path]


@dataclass
class Checkpoint:
    """Everything needed to resume or evaluate a run"""
    params: "OrderedDict[str, np.ndarray]"
    config: Dict[str, Any]
    epoch: int = 0
    rng_state: Optional[Dict[str, Any]] = None
    optimizer: Dict[str, Any] = field(default_factory=lambda: {"step": 0, "lr": None})
    scheduler: Dict[str, Any] = field(default_factory=dict)
    adam_m: Dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: Dict[str, np.ndarray] = field(default_factory=dict)
    metrics: Dict[str, Any] = field(default_factory=dict)

    def tensors(self) -> "OrderedDict[str, np.ndarray]":
        """Parameters in registration order, then first and second moments"""
        ordered: "OrderedDict[str, np.ndarray]" = OrderedDict(self.params)
        for name in self.params:
            if name in self.adam_m:
                ordered[f"adam.m.{name}"] = self.adam_m[name]
        for name in self.params:
            if name in self.adam_v:
                ordered[f"adam.v.{name}"] = self.adam_v[name]
        return ordered


def _header(checkpoint: Checkpoint) -> Dict[str, Any]:
    entries: List[Dict[str, Any]] = []
    offset = 0
    for name, array in checkpoint.tensors().items():
        nbytes = int(np.prod(array.shape, dtype=np.int64)) * PAYLOAD_DTYPE.itemsize
        entries.append({"name": name, "shape": list(array.shape), "dtype": PAYLOAD_DTYPE.str,
                        "offset": offset, "nbytes": nbytes})
        offset += nbytes
    return {
        "format_version": FORMAT_VERSION,
        "tensors": entries,
        "config": checkpoint.config,
        "epoch": checkpoint.epoch,
        "rng_state": checkpoint.rng_state,
        "optimizer": checkpoint.optimizer,
        "scheduler": checkpoint.scheduler,
        "metrics": checkpoint.metrics,
    }


def save_checkpoint(checkpoint: Checkpoint, path: PathLike) -> Path:
    """Serialise ``checkpoint``; the file is replaced atomically"""
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        header = json.dumps(_header(checkpoint), sort_keys=True, separators=(",", ":"))
        tmp = target.with_name(target.name + ".tmp")
        with open(tmp, "wb") as handle:
            handle.write(MAGIC)
            handle.write(header.encode("utf-8") + b"\n")
            for array in checkpoint.tensors().values():
                handle.write(np.ascontiguousarray(array, dtype=PAYLOAD_DTYPE).tobytes())
        os.replace(tmp, target)
        logger.debug("Checkpoint saved", path=str(target), epoch=checkpoint.epoch)
        return target
    except OSError as e:
        logger.error(f"Checkpoint save failed: {str(e)}", path=str(target))
        raise OutputError(f"cannot write checkpoint: {e.strerror or e}", path=str(target)) from e


def _parse(raw: bytes, source: str) -> Checkpoint:
    if raw[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{source}: bad magic {raw[:len(MAGIC)]!r}, expected {MAGIC!r}")
    newline = raw.find(b"\n", len(MAGIC))
    if newline < 0:
        raise FormatError(f"{source}: header is not terminated")
    try:
        header = json.loads(raw[len(MAGIC):newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{source}: unreadable header ({e})") from e
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{source}: unsupported format version {header.get('format_version')}")

    payload = memoryview(raw)[newline + 1:]
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for entry in header.get("tensors", []):
        name, shape = entry["name"], tuple(entry["shape"])
        start, nbytes = int(entry["offset"]), int(entry["nbytes"])
        if np.dtype(entry["dtype"]) != PAYLOAD_DTYPE:
            raise FormatError(f"{source}: tensor '{name}' has unsupported dtype {entry['dtype']}")
        if nbytes != int(np.prod(shape, dtype=np.int64)) * PAYLOAD_DTYPE.itemsize:
            raise FormatError(f"{source}: tensor '{name}' byte count {nbytes} does not match shape {list(shape)}")
        if start < 0 or start + nbytes > len(payload):
            raise FormatError(f"{source}: payload truncated at tensor '{name}' "
                              f"(needs {start + nbytes} bytes, has {len(payload)})")
        if name in tensors:
            raise FormatError(f"{source}: tensor '{name}' listed twice")
        tensors[name] = np.frombuffer(payload[start:start + nbytes], dtype=PAYLOAD_DTYPE).reshape(shape).copy()

    params: "OrderedDict[str, np.ndarray]" = OrderedDict()
    moments: Dict[str, Dict[str, np.ndarray]] = {prefix: {} for prefix in MOMENT_PREFIXES}
    for name, array in tensors.items():
        prefix = next((p for p in MOMENT_PREFIXES if name.startswith(p)), None)
        if prefix is None:
            params[name] = array
        else:
            moments[prefix][name[len(prefix):]] = array

    return Checkpoint(
        params=params,
        config=header.get("config", {}),
        epoch=int(header.get("epoch", 0)),
        rng_state=header.get("rng_state"),
        optimizer=header.get("optimizer", {}),
        scheduler=header.get("scheduler", {}),
        adam_m=moments["adam.m."],
        adam_v=moments["adam.v."],
        metrics=header.get("metrics", {}),
    )


def load_checkpoint(path: PathLike) -> Checkpoint:
    source = Path(path)
    try:
        if not source.is_file():
            raise LoadError("missing checkpoint", path=str(source))
        return _parse(source.read_bytes(), str(source))
    except (OSError, FormatError, LoadError) as e:
        logger.error(f"Checkpoint load failed: {str(e)}", path=str(source))
        raise


def checkpoint_io(checkpoint: Optional[Checkpoint], path: PathLike, direction: str) -> Optional[Checkpoint]:
    """Save ``checkpoint`` to ``path`` or load one from it, by ``direction``"""
    if direction == "write":
        save_checkpoint(checkpoint, path)
        return None
    if direction == "read":
        return load_checkpoint(path)
    raise ValueError(f"Unknown direction: {direction}")


def restore_params(checkpoint: Checkpoint, params: ModelParams) -> None:
    """Copy checkpoint weights into ``params``; names and shapes must agree exactly"""
    expected = set(params.names())
    stored = set(checkpoint.params)
    if expected != stored:
        missing = sorted(expected - stored)
        extra = sorted(stored - expected)
        raise ConfigMismatchError(f"checkpoint parameters differ from the model (missing={missing}, extra={extra})")
    for name, tensor in params.items():
        shape = tuple(checkpoint.params[name].shape)
        if shape != tensor.shape:
            raise ConfigMismatchError(f"parameter '{name}' has shape {list(shape)} in the checkpoint, "
                                      f"model expects {list(tensor.shape)}")
    params.load_state_dict(checkpoint.params)
