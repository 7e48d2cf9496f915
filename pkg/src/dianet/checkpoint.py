"""Versioned binary container for model weights and hidden-state traces.

Layout::

    b"DIA1" | u32 little-endian manifest length | UTF-8 JSON manifest | payloads

The manifest lists ``entries`` (id, shape, dtype) in payload order; every
payload is the raw little-endian array bytes. ``meta`` carries free-form JSON
(configs, normalization statistics). ``kind`` is "model" or "trace".
"""

from __future__ import annotations

import json
import math
import struct

import numpy as np

from .errors import ConfigError

MAGIC = b"DIA1"
VERSION = 1


def write_container(path, arrays: dict[str, np.ndarray], meta: dict, kind: str = "model") -> None:
    entries, payloads = [], []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        entries.append({"id": name, "shape": list(arr.shape), "dtype": le.dtype.str})
        payloads.append(np.ascontiguousarray(le).tobytes())
    manifest = {"version": VERSION, "kind": kind, "entries": entries, "meta": meta}
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in payloads:
            fh.write(p)


def read_container(path) -> tuple[dict[str, np.ndarray], dict, str]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ConfigError(f"{path}: not a DIA1 container")
    (n,) = struct.unpack("<I", data[4:8])
    manifest = json.loads(data[8:8 + n].decode("utf-8"))
    if manifest.get("version") != VERSION:
        raise ConfigError(f"{path}: unsupported container version {manifest.get('version')}")
    offset = 8 + n
    arrays = {}
    for e in manifest["entries"]:
        dt = np.dtype(e["dtype"])
        count = math.prod(e["shape"])
        nbytes = count * dt.itemsize
        if offset + nbytes > len(data):
            raise ConfigError(f"{path}: truncated payload for {e['id']}")
        arrays[e["id"]] = np.frombuffer(data, dtype=dt, count=count, offset=offset).reshape(e["shape"]).copy()
        offset += nbytes
    return arrays, manifest["meta"], manifest["kind"]


def save_checkpoint(path, net, meta: dict | None = None) -> None:
    arrays = {p.name: p.data for p in net.parameters()}
    arrays.update(net.buffers())
    meta = dict(meta or {})
    meta["network"] = net.config.to_dict()
    meta["seed"] = net.seed
    meta["dtype"] = net.dtype.name
    write_container(path, arrays, meta, kind="model")


def load_checkpoint(path):
    """Rebuild the network stored at ``path``; returns (network, meta)."""
    from .backbone import Network, NetworkConfig

    arrays, meta, kind = read_container(path)
    if kind != "model":
        raise ConfigError(f"{path}: expected a model checkpoint, found {kind!r}")
    net = Network(NetworkConfig.from_dict(meta["network"]), seed=meta["seed"], dtype=np.dtype(meta["dtype"]))
    for p in net.parameters():
        if p.name not in arrays:
            raise ConfigError(f"{path}: missing parameter {p.name}")
        p.data[...] = arrays[p.name]
    for name, buf in net.buffers().items():
        if name in arrays:
            buf[...] = arrays[name]
    return net, meta


def save_trace(path, trace) -> None:
    write_container(path, {"h": trace.values}, {"stage": trace.stage}, kind="trace")


def load_trace(path):
    from .analysis import HiddenStateTrace

    arrays, meta, kind = read_container(path)
    if kind != "trace":
        raise ConfigError(f"{path}: expected a trace dump, found {kind!r}")
    return HiddenStateTrace(arrays["h"], meta["stage"])
