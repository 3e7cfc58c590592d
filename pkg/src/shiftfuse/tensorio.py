"""Header + payload tensor files.

A tensor lives in two files: ``name.json`` (header) and ``name.bin`` (raw
little-endian floats, row-major). The header carries ``dims``, ``dtype``
(``f32``/``f64``), ``layout`` and any extra metadata (``rate_hz``,
``stages``...). Multi-tensor checkpoints use a ``tensors`` table of
``{name: {dims, offset}}`` with offsets in elements.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DimensionError, InputError

_CODES = {"f32": "<f4", "f64": "<f8"}


def _code(dtype) -> str:
    return "f64" if np.dtype(dtype) == np.float64 else "f32"


def _paths(path) -> tuple[Path, Path]:
    path = Path(path)
    if path.suffix in (".json", ".bin"):
        path = path.with_suffix("")
    return path.with_suffix(".json"), path.with_suffix(".bin")


def _dump_header(header: dict, path: Path):
    path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")


def save_tensor(path, array: np.ndarray, dtype="f32", **meta) -> Path:
    header_path, payload_path = _paths(path)
    array = np.ascontiguousarray(array)
    header = {"dims": list(array.shape), "dtype": dtype, "layout": "row-major",
              "payload": payload_path.name, **meta}
    header_path.parent.mkdir(parents=True, exist_ok=True)
    payload_path.write_bytes(array.astype(_CODES[dtype]).tobytes())
    _dump_header(header, header_path)
    return header_path


def load_tensor(path) -> tuple[np.ndarray, dict]:
    header_path, payload_path = _paths(path)
    try:
        header = json.loads(header_path.read_text())
    except FileNotFoundError:
        raise InputError(f"missing tensor header {header_path}") from None
    if header.get("layout", "row-major") != "row-major":
        raise InputError(f"unsupported layout {header['layout']!r}")
    dtype = header.get("dtype", "f32")
    if dtype not in _CODES:
        raise InputError(f"unsupported dtype {dtype!r}")
    if "payload" in header:
        payload_path = header_path.parent / header["payload"]
    data = np.frombuffer(payload_path.read_bytes(), dtype=_CODES[dtype])
    dims = tuple(int(d) for d in header["dims"])
    if int(np.prod(dims)) != data.size:
        raise DimensionError(f"payload holds {data.size} values, header dims {dims} need "
                             f"{int(np.prod(dims))}")
    return data.reshape(dims).astype(np.float64 if dtype == "f64" else np.float32), header


def save_checkpoint(path, tensors: dict, dtype="f64", **meta) -> Path:
    header_path, payload_path = _paths(path)
    table = {}
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        table[name] = {"dims": list(arr.shape), "offset": offset}
        chunks.append(arr.astype(_CODES[dtype]).reshape(-1))
        offset += arr.size
    header_path.parent.mkdir(parents=True, exist_ok=True)
    payload = np.concatenate(chunks) if chunks else np.zeros(0, dtype=_CODES[dtype])
    payload_path.write_bytes(payload.tobytes())
    _dump_header({"dtype": dtype, "layout": "row-major", "payload": payload_path.name,
                  "tensors": table, **meta}, header_path)
    return header_path


def load_checkpoint(path) -> tuple[dict, dict]:
    header_path, payload_path = _paths(path)
    try:
        header = json.loads(header_path.read_text())
    except FileNotFoundError:
        raise InputError(f"missing checkpoint header {header_path}") from None
    dtype = header.get("dtype", "f64")
    if "payload" in header:
        payload_path = header_path.parent / header["payload"]
    flat = np.frombuffer(payload_path.read_bytes(), dtype=_CODES[dtype])
    out = {}
    # payload order, not header key order (headers are written sorted)
    for name, entry in sorted(header["tensors"].items(), key=lambda kv: kv[1]["offset"]):
        dims = tuple(entry["dims"])
        n = int(np.prod(dims))
        lo = entry["offset"]
        if lo + n > flat.size:
            raise DimensionError(f"tensor {name!r} runs past the payload end")
        out[name] = flat[lo:lo + n].reshape(dims).astype(
            np.float64 if dtype == "f64" else np.float32)
    return out, header


def dtype_code(dtype) -> str:
    return _code(dtype)
