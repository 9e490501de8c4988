"""Named-parameter checkpoints.

Layout::

    COVEFORGE1
    version 1
    meta <one-line JSON: config echo, vocabularies, labels, ...>
    params <N>
    <name> <f32|f64> <d0,d1,...>        (N lines, payload order)
    <raw little-endian payloads>
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = "COVEFORGE1"
VERSION = 1
_CODES = {"f32": "<f4", "f64": "<f8"}


class CheckpointError(ValueError):
    pass


def _dtype_code(arr: np.ndarray) -> str:
    return "f64" if arr.dtype == np.float64 else "f32"


def save_checkpoint(path: str | Path, params: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    lines = [MAGIC, f"version {VERSION}", "meta " + json.dumps(meta or {}, sort_keys=True),
             f"params {len(params)}"]
    for name, arr in params.items():
        if any(c.isspace() for c in name):
            raise CheckpointError(f"parameter name {name!r} contains whitespace")
        shape = ",".join(str(n) for n in arr.shape) or "-"
        lines.append(f"{name} {_dtype_code(arr)} {shape}")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for arr in params.values():
            fh.write(np.ascontiguousarray(arr, dtype=_CODES[_dtype_code(arr)]).tobytes())


def read_manifest(fh) -> tuple[dict, list[tuple[str, str, tuple[int, ...]]]]:
    def line() -> str:
        raw = fh.readline()
        if not raw:
            raise CheckpointError("truncated checkpoint manifest")
        return raw.decode("utf-8").rstrip("\n")

    if line() != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version = line()
    if version != f"version {VERSION}":
        raise CheckpointError(f"unsupported checkpoint {version!r}")
    meta_line = line()
    if not meta_line.startswith("meta "):
        raise CheckpointError("missing meta line")
    meta = json.loads(meta_line[5:])
    head = line().split()
    if len(head) != 2 or head[0] != "params":
        raise CheckpointError("missing params count")
    entries = []
    for _ in range(int(head[1])):
        parts = line().split()
        if len(parts) != 3 or parts[1] not in _CODES:
            raise CheckpointError(f"bad manifest entry {parts}")
        shape = () if parts[2] == "-" else tuple(int(n) for n in parts[2].split(","))
        entries.append((parts[0], parts[1], shape))
    return meta, entries


def load_checkpoint(path: str | Path, expected_shapes: Mapping[str, tuple] | None = None,
                    expected_meta: Mapping | None = None) -> tuple[dict[str, np.ndarray], dict]:
    """Read ``(params, meta)``.

    The manifest is validated against ``expected_shapes`` (when given) before
    any payload is read; ``expected_meta`` keys must match the stored echo.
    """
    with open(path, "rb") as fh:
        meta, entries = read_manifest(fh)
        if expected_meta:
            for key, value in expected_meta.items():
                if meta.get(key) != value:
                    raise CheckpointError(
                        f"config mismatch for {key!r}: checkpoint has {meta.get(key)!r}, "
                        f"expected {value!r}")
        if expected_shapes is not None:
            for name, _, shape in entries:
                if name in expected_shapes and tuple(expected_shapes[name]) != shape:
                    raise CheckpointError(
                        f"parameter {name}: checkpoint shape {shape} != model shape "
                        f"{tuple(expected_shapes[name])}")
        params = {}
        for name, code, shape in entries:
            dt = np.dtype(_CODES[code])
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            raw = fh.read(nbytes)
            if len(raw) != nbytes:
                raise CheckpointError(f"payload for {name} truncated ({len(raw)}/{nbytes} bytes)")
            params[name] = np.frombuffer(raw, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
        if fh.read(1):
            raise CheckpointError("trailing bytes after the last payload")
    return params, meta


def subset(params: Mapping[str, np.ndarray], prefix: str, strip: bool = True) -> dict[str, np.ndarray]:
    """Entries under ``prefix`` (e.g. ``"encoder."``), optionally with the prefix removed."""
    return {(k[len(prefix):] if strip else k): v for k, v in params.items() if k.startswith(prefix)}


def load_into(module, params: Mapping[str, np.ndarray], prefix: str = "") -> None:
    """Copy ``prefix``-ed entries into ``module``; every module parameter must be present."""
    own = dict(module.named_parameters())
    for name, p in own.items():
        key = prefix + name
        if key not in params:
            raise CheckpointError(f"checkpoint lacks parameter {key}")
        if params[key].shape != p.shape:
            raise CheckpointError(
                f"parameter {key}: checkpoint shape {params[key].shape} != model shape {p.shape}")
    for name, p in own.items():
        p.data = np.array(params[prefix + name], dtype=p.dtype)
