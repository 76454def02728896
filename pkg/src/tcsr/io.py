"""Checkpoint files and ``key = value`` configuration files.

Checkpoint layout, all integers little-endian::

    b"TCSR"  u32 version  u32 count
    count x (u32 name_len, name utf-8, u8 dtype tag, u32 rank, rank x u64 dim, data)
    u64 checksum        (blake2b-64 of every preceding byte)

Model checkpoints carry their configuration as a ``uint8`` tensor named
``__config__`` holding the config text, so a file is self-describing.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .model import Model, ModelConfig, REFERENCE_CONFIGS

MAGIC = b"TCSR"
VERSION = 1
CONFIG_KEY = "__config__"
STEP_KEY = "__step__"

_TAGS = {0: "<f4", 1: "<f8", 2: "|u1", 3: "<i8", 4: "<i4", 5: "<f2"}
_CODES = {np.dtype(v): k for k, v in _TAGS.items()}


class CheckpointError(ValueError):
    pass


class ParamStore(dict):
    """Ordered ``name -> ndarray`` mapping; what a checkpoint file holds."""

    def __setitem__(self, key, value):
        if not isinstance(key, str) or not key:
            raise TypeError("tensor names must be non-empty strings")
        super().__setitem__(key, np.asarray(value))


def _digest(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def encode_store(store) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(store))]
    for name, arr in store.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype)
        if code is None:
            raise TypeError(f"cannot store dtype {arr.dtype} ({name})")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BI", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_TAGS[code]).tobytes())
    body = b"".join(parts)
    return body + _digest(body)


def decode_store(blob: bytes) -> ParamStore:
    if len(blob) < 20 or blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic or too short)")
    body, checksum = blob[:-8], blob[-8:]
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    if _digest(body) != checksum:
        raise CheckpointError("checksum mismatch: file is corrupt")
    store = ParamStore()
    pos = 12
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + n].decode("utf-8")
            pos += n
            code, rank = struct.unpack_from("<BI", body, pos)
            pos += 5
            shape = struct.unpack_from(f"<{rank}Q", body, pos)
            pos += 8 * rank
            dtype = np.dtype(_TAGS[code])
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if pos + nbytes > len(body):
                raise CheckpointError(f"truncated data for tensor {name!r}")
            arr = np.frombuffer(body, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos)
            store[name] = arr.reshape(shape).astype(dtype.newbyteorder("="))
            pos += nbytes
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    if pos != len(body):
        raise CheckpointError("trailing bytes after last tensor")
    return store


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(obj, path, train_config=None, step: int | None = None) -> None:
    """Write a :class:`Model` or a plain mapping of tensors; the file appears atomically."""
    store = ParamStore()
    if isinstance(obj, Model):
        store[CONFIG_KEY] = np.frombuffer(
            dump_config(obj.config, train_config).encode("utf-8"), dtype=np.uint8)
        if step is not None:
            store[STEP_KEY] = np.array([step], dtype=np.int64)
        params = obj.params
    else:
        params = obj
    for k, v in params.items():
        store[k] = v
    _atomic_write(Path(path), encode_store(store))


def load_checkpoint(path) -> ParamStore:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    return decode_store(path.read_bytes())


def load_model(path) -> Model:
    store = load_checkpoint(path)
    if CONFIG_KEY not in store:
        raise CheckpointError(f"{path} holds no model configuration")
    cfg, _ = parse_config(store.pop(CONFIG_KEY).tobytes().decode("utf-8"))
    store.pop(STEP_KEY, None)
    return Model(cfg, dict(store))


# ---------------------------------------------------------------------------
# config text

def _train_config_cls():
    from .train import TrainConfig
    return TrainConfig


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_as(text: str, like, key: str):
    try:
        if isinstance(like, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        return text
    except ValueError:
        raise ValueError(f"bad value for {key}: {text!r}") from None


def dump_config(model_config: ModelConfig, train_config=None) -> str:
    lines = ["# model"]
    lines += [f"{f.name} = {_format(getattr(model_config, f.name))}"
              for f in dataclasses.fields(model_config)]
    if train_config is not None:
        lines.append("# training")
        lines += [f"{f.name} = {_format(getattr(train_config, f.name))}"
                  for f in dataclasses.fields(train_config)]
    return "\n".join(lines) + "\n"


def parse_config(text: str):
    """``(ModelConfig, TrainConfig)`` from ``key = value`` lines.

    ``variant`` naming a reference config (tiny, B, L) supplies the defaults
    for every model key not given.  Unknown or repeated keys are errors.
    """
    TrainConfig = _train_config_cls()
    model_keys = {f.name for f in dataclasses.fields(ModelConfig)}
    train_keys = {f.name for f in dataclasses.fields(TrainConfig)}
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in model_keys and key not in train_keys:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        if key in pairs:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value
    base = REFERENCE_CONFIGS.get(pairs.get("variant", ""), ModelConfig())
    mc = dataclasses.replace(base, **{k: _parse_as(v, getattr(base, k), k)
                                      for k, v in pairs.items() if k in model_keys})
    tbase = TrainConfig()
    tc = dataclasses.replace(tbase, **{k: _parse_as(v, getattr(tbase, k), k)
                                       for k, v in pairs.items() if k in train_keys})
    return mc, tc


def read_config(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such config: {path}")
    return parse_config(path.read_text())


def write_config(path, model_config: ModelConfig, train_config=None) -> None:
    Path(path).write_text(dump_config(model_config, train_config))
