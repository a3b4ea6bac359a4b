"""On-disk formats: DMAP rasters, gate checkpoints, and flat ``key = value`` config files.

DMAP layout: ``b"DMAP"``, then little-endian uint32 width, height, channels,
then float32 little-endian samples, row-major with the channel index fastest.

Checkpoint layout: ``b"BGCK"``, a little-endian uint32 manifest length, the
UTF-8 JSON manifest, then the concatenated DMAP records it indexes. Offsets
in the manifest are relative to the first record byte.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import fields
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, FormatError, ParameterError
from .pipeline import ModelConfig, StubModel, TrainConfig, build_model

DMAP_MAGIC = b"DMAP"
CKPT_MAGIC = b"BGCK"
CKPT_FORMAT = 1
_HEADER = struct.Struct("<4sIII")


# ---------------------------------------------------------------------- DMAP

def encode_raster(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim == 1:
        arr = arr[None, :, None]
    elif arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ParameterError(f"raster must be 1-D, HxW or HxWxC, got shape {arr.shape}")
    h, w, c = arr.shape
    return _HEADER.pack(DMAP_MAGIC, w, h, c) + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_raster(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one DMAP record at ``offset``; returns an (H, W, C) float64 array and the end offset."""
    if len(buf) - offset < _HEADER.size:
        raise FormatError("truncated DMAP header")
    magic, w, h, c = _HEADER.unpack_from(buf, offset)
    if magic != DMAP_MAGIC:
        raise FormatError(f"bad DMAP magic {magic!r}")
    start = offset + _HEADER.size
    end = start + 4 * w * h * c
    if len(buf) < end:
        raise FormatError(f"truncated DMAP payload: need {end - start} bytes for {h}x{w}x{c}")
    data = np.frombuffer(buf, dtype="<f4", count=w * h * c, offset=start)
    return data.astype(np.float64).reshape(h, w, c), end


def write_raster(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode_raster(arr))


def read_raster(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = decode_raster(buf)
    if end != len(buf):
        raise FormatError(f"{path}: {len(buf) - end} trailing bytes after DMAP record")
    return arr


# ----------------------------------------------------------------- checkpoints

def encode_checkpoint(model: StubModel, extra: dict | None = None) -> bytes:
    records, payload, offset = [], [], 0
    for i, gate in enumerate(model.gates):
        for name, t in gate.named_tensors().items():
            blob = encode_raster(t.data)
            records.append({"name": f"gate{i}.{name}", "offset": offset, "length": len(blob),
                            "shape": list(t.shape)})
            payload.append(blob)
            offset += len(blob)
    body = b"".join(payload)
    manifest = {
        "format": CKPT_FORMAT,
        "config": model.cfg.to_dict(),
        "frozen_digest": model.frozen_digest(),
        "payload_sha256": hashlib.sha256(body).hexdigest(),
        "records": records,
        "extra": extra or {},
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    return CKPT_MAGIC + struct.pack("<I", len(head)) + head + body


def save_checkpoint(path, model: StubModel, extra: dict | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(model, extra))


def read_manifest(buf: bytes) -> tuple[dict, bytes]:
    if len(buf) < 8 or buf[:4] != CKPT_MAGIC:
        raise FormatError("not a gate checkpoint (bad magic)")
    (n,) = struct.unpack_from("<I", buf, 4)
    if len(buf) < 8 + n:
        raise FormatError("truncated checkpoint manifest")
    try:
        manifest = json.loads(buf[8:8 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable checkpoint manifest: {exc}") from None
    if manifest.get("format") != CKPT_FORMAT:
        raise FormatError(f"unsupported checkpoint format {manifest.get('format')!r}")
    body = buf[8 + n:]
    if hashlib.sha256(body).hexdigest() != manifest.get("payload_sha256"):
        raise FormatError("checkpoint payload digest mismatch")
    return manifest, body


def load_checkpoint(path) -> StubModel:
    """Rebuild the model from the stored config and install the stored gate weights.

    The frozen parts are regenerated from the config seed and must reproduce the
    recorded frozen digest.
    """
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from None
    manifest, body = read_manifest(buf)
    try:
        cfg = ModelConfig.from_dict(manifest["config"])
    except (TypeError, KeyError, ValueError) as exc:
        raise FormatError(f"invalid config in checkpoint: {exc}") from None
    model = build_model(cfg)
    if model.frozen_digest() != manifest.get("frozen_digest"):
        raise FormatError("frozen-parameter digest does not match the checkpoint")

    stored = {}
    for rec in manifest["records"]:
        arr, end = decode_raster(body, rec["offset"])
        if end - rec["offset"] != rec["length"]:
            raise FormatError(f"record {rec['name']} has inconsistent length")
        stored[rec["name"]] = arr.reshape(rec["shape"])
    for i, gate in enumerate(model.gates):
        for name, t in gate.named_tensors().items():
            key = f"gate{i}.{name}"
            if key not in stored or stored[key].shape != t.shape:
                raise FormatError(f"checkpoint lacks a usable record for {key}")
            t.data = stored[key]
    return model


# --------------------------------------------------------------------- config

def _parse_grid(key: str, text: str) -> tuple[int, int]:
    parts = text.lower().replace(" ", "").split("x")
    try:
        h, w = (int(p) for p in parts)
    except ValueError:
        raise ConfigError(key, f"expected HxW, got {text!r}") from None
    return h, w


def _parse_bool(key: str, text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(key, f"expected a boolean, got {text!r}")


def _parse_value(key: str, text: str, default):
    if key == "level_grids":
        grids = [_parse_grid(key, g) for g in text.split(",") if g.strip()]
        return tuple(grids * 4) if len(grids) == 1 else tuple(grids)
    if isinstance(default, tuple):
        return _parse_grid(key, text)
    if isinstance(default, bool):
        return _parse_bool(key, text)
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(key, f"cannot parse {text!r} as {type(default).__name__}") from None
    return text


def parse_config(text: str) -> tuple[ModelConfig, TrainConfig]:
    model_defaults = {f.name: getattr(ModelConfig(), f.name) for f in fields(ModelConfig)}
    train_defaults = {f.name: getattr(TrainConfig(), f.name) for f in fields(TrainConfig)}
    model_kw, train_kw = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in model_kw or key in train_kw:
            raise ConfigError(key, "duplicate key")
        if key in model_defaults:
            model_kw[key] = _parse_value(key, value, model_defaults[key])
        elif key in train_defaults:
            train_kw[key] = _parse_value(key, value, train_defaults[key])
        else:
            raise ConfigError(key, "unknown key")
    try:
        mcfg = ModelConfig(**model_kw)
        tcfg = TrainConfig(**train_kw)
        tcfg.validate()
    except ParameterError as exc:
        key = str(exc).split(":", 1)[0]
        raise ConfigError(key, str(exc).split(":", 1)[-1].strip()) from None
    return mcfg, tcfg


def load_config(path) -> tuple[ModelConfig, TrainConfig]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    return parse_config(text)


def format_config(mcfg: ModelConfig, tcfg: TrainConfig) -> str:
    lines = []
    for obj in (mcfg, tcfg):
        for f in fields(obj):
            v = getattr(obj, f.name)
            if f.name == "level_grids":
                v = ",".join(f"{h}x{w}" for h, w in v)
            elif isinstance(v, tuple):
                v = f"{v[0]}x{v[1]}"
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
