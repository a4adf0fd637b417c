"""Binary path-template cache keyed by trace inputs.

Format (little endian), documented for external tooling:

    magic   4 bytes  b"RTPC"
    version u32      1
    freq    f64      carrier frequency [Hz]
    count   u32      number of template records
    record:
        tile  i32
        kind  u8     0 = los, 1 = spec, 2 = scat
        depth u8     number of surface indices
        surf  i32 * depth
        point f64 * 3   (scatter records only)

Cache entries are keyed by a SHA-256 over the scene content, transmitter,
grid, frequency, and trace configuration, so a stale scene never matches.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .grid import TileGrid
from .scene import Scene, scene_to_dict
from .spatial import SpatialIndex
from .tracer import PathSet, PathTemplate, TraceConfig, trace_sector

MAGIC = b"RTPC"
VERSION = 1
_KIND_CODE = {"los": 0, "spec": 1, "scat": 2}
_KIND_NAME = {v: k for k, v in _KIND_CODE.items()}


def cache_key(scene: Scene, tx_position, config: TraceConfig, grid: TileGrid,
              frequency_hz: float) -> str:
    doc = {
        "scene": scene_to_dict(scene),
        "tx": [float(v) for v in np.asarray(tx_position, float)],
        "config": dataclasses.asdict(config),
        "grid": dataclasses.asdict(grid),
        "frequency_hz": frequency_hz,
        "version": VERSION,
    }
    blob = json.dumps(doc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def save_pathset(ps: PathSet, path) -> None:
    out = bytearray()
    records = []
    for tile in ps.tiles():
        for tpl in ps.templates_for(tile):
            records.append((tile, tpl))
    out += MAGIC
    out += struct.pack("<Id", VERSION, ps.frequency_hz)
    out += struct.pack("<I", len(records))
    for tile, tpl in records:
        out += struct.pack("<iBB", tile, _KIND_CODE[tpl.kind], len(tpl.surfaces))
        for s in tpl.surfaces:
            out += struct.pack("<i", s)
        if tpl.kind == "scat":
            out += struct.pack("<3d", *tpl.scatter_point)
    Path(path).write_bytes(bytes(out))


def load_pathset(path, index: SpatialIndex, grid: TileGrid, tx_position,
                 config: TraceConfig) -> PathSet:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a path cache file")
    version, freq = struct.unpack_from("<Id", raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported cache version {version}")
    (count,) = struct.unpack_from("<I", raw, 16)
    off = 20
    ps = PathSet(index, grid, np.asarray(tx_position, float), freq, config)
    for _ in range(count):
        tile, kind, depth = struct.unpack_from("<iBB", raw, off)
        off += 6
        surfaces = struct.unpack_from(f"<{depth}i", raw, off) if depth else ()
        off += 4 * depth
        point = None
        if kind == _KIND_CODE["scat"]:
            point = struct.unpack_from("<3d", raw, off)
            off += 24
        ps.add(tile, PathTemplate(_KIND_NAME[kind], tuple(surfaces), point))
    return ps


def cached_trace_sector(
    index: SpatialIndex,
    tx_position,
    config: TraceConfig,
    grid: TileGrid,
    frequency_hz: float,
    cache_dir: Optional[Path],
) -> PathSet:
    """trace_sector with an optional on-disk template cache."""
    if cache_dir is None:
        return trace_sector(index, tx_position, config, grid, frequency_hz)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    key = cache_key(index.scene, tx_position, config, grid, frequency_hz)
    f = cache_dir / f"{key}.rtpc"
    if f.is_file():
        return load_pathset(f, index, grid, tx_position, config)
    ps = trace_sector(index, tx_position, config, grid, frequency_hz)
    save_pathset(ps, f)
    return ps
