"""File formats: flat binary tensors, point clouds, voxel/BEV dumps and parameter bundles.

Tensor file (``.phtn``), little-endian::

    b"PHTN" | u8 version=1 | u8 dtype code | u8 ndim | u8 reserved
    | ndim x u64 dims | row-major data

Binary point cloud (``.bin``)::

    b"PHPC" | u8 version=1 | u32 count | count x (f32 x, y, z, intensity)

CSV point cloud: header ``x,y,z,intensity`` then one point per row.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from .bev import BevMap
from .block import BackboneParams, PhimBlockParams
from .core import GridSpec, InvalidPointError, Point, SparseVoxelTensor
from .ddc import ConvSpec, LayerStack
from .ssm import SsmParams

TENSOR_MAGIC = b"PHTN"
CLOUD_MAGIC = b"PHPC"
VERSION = 1

_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8"), 4: np.dtype("<i4"), 5: np.dtype("u1")}
_CODES = {dt: code for code, dt in _DTYPES.items()}


class FormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


# --- tensors ------------------------------------------------------------------


def encode_tensor(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    dt = arr.dtype.newbyteorder("<")
    if dt not in _CODES:
        raise TypeError(f"unsupported tensor dtype {arr.dtype}")
    head = TENSOR_MAGIC + struct.pack("<BBBB", VERSION, _CODES[dt], arr.ndim, 0)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=dt).tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 8:
        raise FormatError("truncated tensor header", len(buf))
    if buf[:4] != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic {buf[:4]!r}", 0)
    version, code, ndim, _ = struct.unpack_from("<BBBB", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported tensor version {version}", 4)
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}", 5)
    end = 8 + 8 * ndim
    if len(buf) < end:
        raise FormatError("truncated tensor dims", len(buf))
    shape = struct.unpack_from(f"<{ndim}Q", buf, 8)
    dt = _DTYPES[code]
    need = end + dt.itemsize * math.prod(shape)
    if len(buf) != need:
        raise FormatError(f"tensor body holds {len(buf) - end} bytes, expected {need - end}", len(buf))
    return np.frombuffer(buf, dt, offset=end).reshape(shape).copy()


def write_tensor(path, arr) -> None:
    Path(path).write_bytes(encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


# --- point clouds ---------------------------------------------------------------


def _infer_format(path, fmt):
    if fmt is not None:
        if fmt not in ("csv", "binary"):
            raise ValueError(f"format must be 'csv' or 'binary', got {fmt!r}")
        return fmt
    return "csv" if str(path).lower().endswith(".csv") else "binary"


def _check_rows(arr: np.ndarray) -> np.ndarray:
    bad = ~np.all(np.isfinite(arr), axis=1)
    if bad.any():
        raise InvalidPointError(f"non-finite value in point row {int(np.flatnonzero(bad)[0])}")
    return arr


def read_point_array(path, fmt: str | None = None) -> np.ndarray:
    """(n, 4) float64 array of x, y, z, intensity."""
    fmt = _infer_format(path, fmt)
    if fmt == "csv":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or [c.strip() for c in rows[0]] != ["x", "y", "z", "intensity"]:
            raise FormatError("CSV header must be x,y,z,intensity", 0)
        try:
            arr = np.array([[float(v) for v in row] for row in rows[1:] if row], np.float64)
        except ValueError as exc:
            raise FormatError(f"unparsable CSV value: {exc}", 0) from None
        if arr.size == 0:
            arr = arr.reshape(0, 4)
        if arr.ndim != 2 or arr.shape[1] != 4:
            raise FormatError("every CSV row needs four values", 0)
        return _check_rows(arr)
    buf = Path(path).read_bytes()
    if len(buf) < 9:
        raise FormatError("truncated point cloud header", len(buf))
    if buf[:4] != CLOUD_MAGIC:
        raise FormatError(f"bad point cloud magic {buf[:4]!r}", 0)
    if buf[4] != VERSION:
        raise FormatError(f"unsupported point cloud version {buf[4]}", 4)
    (count,) = struct.unpack_from("<I", buf, 5)
    need = 9 + 16 * count
    if len(buf) != need:
        raise FormatError(f"point cloud body holds {len(buf) - 9} bytes, expected {16 * count}", len(buf))
    arr = np.frombuffer(buf, "<f4", offset=9).reshape(count, 4)
    return _check_rows(arr.astype(np.float64))


def read_point_cloud(path, fmt: str | None = None) -> list[Point]:
    arr = read_point_array(path, fmt)
    out = []
    for i, row in enumerate(arr):
        try:
            out.append(Point(*map(float, row)))
        except InvalidPointError as exc:
            raise InvalidPointError(f"row {i}: {exc}") from None
    return out


def write_point_cloud(path, points, fmt: str | None = None) -> None:
    from .voxelize import as_point_array

    arr = as_point_array(points)
    fmt = _infer_format(path, fmt)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "z", "intensity"])
            w.writerows([[repr(float(v)) for v in row] for row in arr])
        return
    body = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(CLOUD_MAGIC + struct.pack("<BI", VERSION, len(arr)) + body)


# --- voxel and BEV dumps ------------------------------------------------------


def grid_to_dict(spec: GridSpec) -> dict:
    return {k: getattr(spec, k) for k in GridSpec.__dataclass_fields__}


def write_voxels(out_dir, t: SparseVoxelTensor, stats: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(out / "coords.phtn", t.coords)
    write_tensor(out / "features.phtn", t.features)
    doc = dict(stats, grid=grid_to_dict(t.spec))
    (out / "stats.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_voxels(out_dir) -> SparseVoxelTensor:
    out = Path(out_dir)
    grid = json.loads((out / "stats.json").read_text())["grid"]
    return SparseVoxelTensor(GridSpec(**grid), read_tensor(out / "coords.phtn"), read_tensor(out / "features.phtn"))


def bev_name(rotation: int, sector: int) -> str:
    return f"bev_r{rotation:04d}_s{sector:03d}"


def write_bev(out_dir, name: str, m: BevMap) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(out / f"{name}.phtn", m.data)
    write_tensor(out / f"{name}_counts.phtn", m.counts)


# --- backbone bundle ------------------------------------------------------------


def _ssm_from(arrays: dict) -> SsmParams:
    return SsmParams(**arrays)


def _conv_meta(c: ConvSpec) -> dict:
    return {"plane": c.plane.value, "kernel": list(c.kernel), "stride": list(c.stride), "mode": c.mode.value}


def save_backbone(bp: BackboneParams, out_dir) -> None:
    """One tensor file per parameter array plus ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensors, blocks = [], []
    for i, b in enumerate(bp.blocks):
        meta = {"ssm": {}, "encoder": [], "decoder": []}
        for role in ("local_fw", "local_bw", "global_fw"):
            names = []
            for k, v in getattr(b, role).arrays().items():
                name = f"block{i}.{role}.{k}"
                write_tensor(out / f"{name}.phtn", v)
                tensors.append({"name": name, "shape": list(np.shape(v))})
                names.append(k)
            meta["ssm"][role] = names
        for stack in ("encoder", "decoder"):
            for j, c in enumerate(getattr(b, stack)):
                for k in ("weights", "bias"):
                    name = f"block{i}.{stack}{j}.{k}"
                    write_tensor(out / f"{name}.phtn", getattr(c, k))
                    tensors.append({"name": name, "shape": list(np.shape(getattr(c, k)))})
                meta[stack].append(_conv_meta(c))
        blocks.append(meta)
    manifest = {
        "format": "polarscan-backbone",
        "version": VERSION,
        "dim": bp.dim,
        "seed": bp.seed,
        "strides": list(bp.strides),
        "kernels": list(bp.kernels),
        "blocks": blocks,
        "tensors": tensors,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_backbone(out_dir) -> BackboneParams:
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    shapes = {t["name"]: tuple(t["shape"]) for t in manifest["tensors"]}

    def load(name):
        arr = read_tensor(out / f"{name}.phtn")
        if arr.shape != shapes[name]:
            raise FormatError(f"{name} has shape {arr.shape}, manifest says {shapes[name]}", 8)
        return arr

    blocks = []
    for i, meta in enumerate(manifest["blocks"]):
        ssms = {
            role: _ssm_from({k: load(f"block{i}.{role}.{k}") for k in names})
            for role, names in meta["ssm"].items()
        }
        stacks = {}
        for stack in ("encoder", "decoder"):
            layers = []
            for j, m in enumerate(meta[stack]):
                layers.append(ConvSpec(m["plane"], tuple(m["kernel"]), tuple(m["stride"]), m["mode"],
                                       load(f"block{i}.{stack}{j}.weights"), load(f"block{i}.{stack}{j}.bias")))
            stacks[stack] = LayerStack(tuple(layers))
        blocks.append(PhimBlockParams(encoder=stacks["encoder"], decoder=stacks["decoder"], **ssms))
    return BackboneParams(tuple(blocks), tuple(manifest["strides"]), tuple(manifest["kernels"]), manifest["seed"])
