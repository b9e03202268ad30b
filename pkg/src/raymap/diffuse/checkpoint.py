"""Binary checkpoint files: magic RFC1, JSON header, raw float64 tensors.

Layout: 4-byte magic, u32 version, u32 header length, UTF-8 JSON header
(sorted keys, so identical states produce identical bytes), then every
tensor in header order as little-endian float64. The header carries the
architecture descriptor, normalization statistics, tensor shapes, adapter
rank metadata, and a free-form extra block for run provenance.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import FormatError
from .data import NormStats
from .net import DenoiserParams, LoraAdapters

CHECKPOINT_MAGIC = b"RFC1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class CheckpointData:
    params: DenoiserParams
    stats: NormStats
    adapters: LoraAdapters | None
    extra: dict


def _tensor_entries(params, adapters):
    entries = [(name, arr) for name, arr in params.tensors().items()]
    if adapters is not None:
        entries += [(name, adapters.tensors[name])
                    for name in sorted(adapters.tensors)]
    return entries


def checkpoint_to_bytes(params: DenoiserParams, stats: NormStats,
                        adapters: LoraAdapters = None,
                        extra: dict = None) -> bytes:
    entries = _tensor_entries(params, adapters)
    header = {
        "arch": {"n_heads": params.n_heads, "hidden": params.hidden,
                 "temb_dim": params.temb_dim},
        "stats": {"lo": stats.lo, "hi": stats.hi, "res_hi": stats.res_hi},
        "tensors": [[name, list(arr.shape)] for name, arr in entries],
        "adapters": None if adapters is None else {"rank": adapters.rank},
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    out = [struct.pack("<4sII", CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
                       len(blob)), blob]
    for _, arr in entries:
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


def checkpoint_from_bytes(buf: bytes) -> CheckpointData:
    if len(buf) < 12:
        raise FormatError("checkpoint too short for its header")
    magic, version, hlen = struct.unpack_from("<4sII", buf, 0)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if len(buf) < 12 + hlen:
        raise FormatError("truncated checkpoint header")
    try:
        header = json.loads(buf[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError("unreadable checkpoint header") from exc
    try:
        arch = header["arch"]
        stats = NormStats(**header["stats"])
        tensor_meta = header["tensors"]
        adapter_meta = header["adapters"]
    except (KeyError, TypeError) as exc:
        raise FormatError("checkpoint header missing fields") from exc

    offset = 12 + hlen
    tensors = {}
    for name, shape in tensor_meta:
        count = int(np.prod(shape)) if shape else 1
        need = count * 8
        if offset + need > len(buf):
            raise FormatError(f"truncated tensor {name}")
        arr = np.frombuffer(buf, dtype="<f8", count=count,
                            offset=offset).astype(np.float64)
        tensors[name] = arr.reshape(shape)
        offset += need
    if offset != len(buf):
        raise FormatError("trailing bytes after checkpoint tensors")

    base_names = ("w1", "b1", "wt", "bt", "w2", "b2", "w3", "b3", "w4",
                  "b4")
    missing = [n for n in base_names if n not in tensors]
    if missing:
        raise FormatError(f"checkpoint lacks tensors {missing}")
    params = DenoiserParams(
        n_heads=int(arch["n_heads"]), hidden=int(arch["hidden"]),
        temb_dim=int(arch["temb_dim"]),
        **{n: tensors[n] for n in base_names})
    adapters = None
    if adapter_meta is not None:
        ad_tensors = {n: a for n, a in tensors.items() if "." in n}
        adapters = LoraAdapters(rank=int(adapter_meta["rank"]),
                                tensors=ad_tensors)
    return CheckpointData(params=params, stats=stats, adapters=adapters,
                          extra=header.get("extra", {}))


def save_checkpoint(path, params, stats, adapters=None, extra=None):
    data = checkpoint_to_bytes(params, stats, adapters, extra)
    with open(path, "wb") as fh:
        fh.write(data)


def load_checkpoint(path) -> CheckpointData:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
