"""Checkpoint persistence: a text manifest plus one raw little-endian blob.

Layout (one directory per checkpoint):
    manifest.txt  header, config fingerprint, then one line per tensor:
                  name<TAB>dtype<TAB>shape<TAB>byte-offset
    params.bin    all tensors back to back, little-endian
    config.cfg    verbatim copy of the run configuration

Optimizer state rides in the same manifest/blob under reserved names
(``opt.m.*``, ``opt.v.*``, ``opt.step``). Round-trips are bit-exact.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .optim import OptimState
from .params import ParamStore

MAGIC = "SVBFCKPT 1"
_DTYPES = {"f4": "<f4", "f8": "<f8"}


class CheckpointError(IOError):
    pass


def config_fingerprint(config_text: str) -> str:
    return hashlib.sha256(config_text.encode()).hexdigest()[:16]


@dataclass
class Checkpoint:
    arrays: dict[str, np.ndarray]
    config_text: str
    fingerprint: str
    opt_step: int = 0
    opt_m: dict[str, np.ndarray] = field(default_factory=dict)
    opt_v: dict[str, np.ndarray] = field(default_factory=dict)


def _dtype_tag(arr: np.ndarray) -> str:
    if arr.dtype == np.float32:
        return "f4"
    if arr.dtype == np.float64:
        return "f8"
    raise CheckpointError(f"unsupported dtype {arr.dtype}")


def save_checkpoint(path, params: ParamStore, config_text: str, opt: OptimState | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries: list[tuple[str, np.ndarray]] = list(params.items_arrays())
    if opt is not None:
        for name in sorted(opt.m):
            entries.append((f"opt.m.{name}", opt.m[name]))
        for name in sorted(opt.v):
            entries.append((f"opt.v.{name}", opt.v[name]))
        entries.append(("opt.step", np.array(float(opt.step))))
    lines = [MAGIC, f"fingerprint\t{config_fingerprint(config_text)}"]
    blob = bytearray()
    for name, arr in entries:
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        offset = len(blob)
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        blob.extend(raw)
        shape = ",".join(str(d) for d in arr.shape)
        lines.append(f"{name}\t{_dtype_tag(arr)}\t{shape}\t{offset}")
    (path / "params.bin").write_bytes(bytes(blob))
    (path / "manifest.txt").write_text("\n".join(lines) + "\n")
    (path / "config.cfg").write_text(config_text)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    manifest = path / "manifest.txt"
    if not manifest.exists():
        raise CheckpointError(f"no manifest at {manifest}")
    lines = manifest.read_text().splitlines()
    if not lines or lines[0] != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    if len(lines) < 2 or not lines[1].startswith("fingerprint\t"):
        raise CheckpointError("manifest missing fingerprint")
    fingerprint = lines[1].split("\t", 1)[1]
    blob = (path / "params.bin").read_bytes()
    config_text = (path / "config.cfg").read_text()
    arrays: dict[str, np.ndarray] = {}
    for line in lines[2:]:
        if not line.strip():
            continue
        try:
            name, tag, shape_s, offset_s = line.split("\t")
            shape = tuple(int(d) for d in shape_s.split(",")) if shape_s else ()
            offset = int(offset_s)
            dtype = np.dtype(_DTYPES[tag])
        except (ValueError, KeyError) as exc:
            raise CheckpointError(f"malformed manifest line {line!r}") from exc
        count = int(np.prod(shape)) if shape else 1
        end = offset + count * dtype.itemsize
        if end > len(blob):
            raise CheckpointError(f"blob truncated: {name} needs bytes up to {end}, have {len(blob)}")
        arrays[name] = np.frombuffer(blob, dtype=dtype, count=count, offset=offset).reshape(shape).copy()
    ck = Checkpoint(arrays={}, config_text=config_text, fingerprint=fingerprint)
    for name, arr in arrays.items():
        if name == "opt.step":
            ck.opt_step = int(arr)
        elif name.startswith("opt.m."):
            ck.opt_m[name[6:]] = arr
        elif name.startswith("opt.v."):
            ck.opt_v[name[6:]] = arr
        else:
            ck.arrays[name] = arr
    return ck


def restore_optimizer(ck: Checkpoint, opt: OptimState) -> None:
    opt.step = ck.opt_step
    opt.m = {k: v.copy() for k, v in ck.opt_m.items()}
    opt.v = {k: v.copy() for k, v in ck.opt_v.items()}
