"""Polar voxels to a dense Cartesian bird's-eye-view map, and the sector buffer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import GeometryError, GridBoundsError, GridSpec, SparseVoxelTensor, VoxelCoord, concat


@dataclass(frozen=True)
class BevSpec:
    x_offset: float
    y_offset: float
    z_offset: float
    dx: float
    dy: float
    dz: float
    n_x: int
    n_y: int
    n_z: int

    def __post_init__(self):
        if min(self.dx, self.dy, self.dz) <= 0:
            raise GeometryError("BEV cell sizes must be positive")
        if min(self.n_x, self.n_y, self.n_z) < 1:
            raise GeometryError("BEV counts must be >= 1")

    @classmethod
    def square(cls, half_extent, n_xy, z_min, z_max, n_z=1):
        d = 2.0 * half_extent / n_xy
        return cls(-half_extent, -half_extent, z_min, d, d, (z_max - z_min) / n_z, n_xy, n_xy, n_z)

    @property
    def x_max(self) -> float:
        return self.x_offset + self.n_x * self.dx

    @property
    def y_max(self) -> float:
        return self.y_offset + self.n_y * self.dy

    @property
    def z_max(self) -> float:
        return self.z_offset + self.n_z * self.dz

    @property
    def n_cells(self) -> int:
        return self.n_x * self.n_y * self.n_z


def polar_index_to_world(c: VoxelCoord, spec: GridSpec) -> tuple[float, float, float]:
    r = spec.r_offset + c.i_r * spec.dr
    theta = spec.theta_offset + c.i_theta * spec.dtheta
    z = spec.z_offset + c.i_z * spec.dz
    return r * math.cos(theta), r * math.sin(theta), z


def polar_indices_to_world(coords: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Vectorized :func:`polar_index_to_world` for (M, 4) coords -> (M, 3)."""
    coords = np.asarray(coords).reshape(-1, 4)
    r = spec.r_offset + coords[:, 2] * spec.dr
    theta = spec.theta_offset + coords[:, 1] * spec.dtheta
    z = spec.z_offset + coords[:, 3] * spec.dz
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def world_to_bev_indices(xyz: np.ndarray, spec: BevSpec):
    """Floor each axis into the grid; returns (M, 3) indices and an in-bounds mask."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    idx = np.floor(
        (xyz - [spec.x_offset, spec.y_offset, spec.z_offset]) / [spec.dx, spec.dy, spec.dz]
    ).astype(np.int64)
    valid = np.all((idx >= 0) & (idx < [spec.n_x, spec.n_y, spec.n_z]), axis=1)
    return idx, valid


def world_to_bev_index(x, y, z, spec: BevSpec):
    """(x', y', z') cell of a world point, or None when it falls outside the grid."""
    idx, valid = world_to_bev_indices([[x, y, z]], spec)
    return tuple(int(v) for v in idx[0]) if valid[0] else None


def linear_index(xi, yi, zi, spec: BevSpec):
    """z' * (N_x * N_y) + y' * N_x + x'; accepts scalars or arrays."""
    xi, yi, zi = (np.asarray(v, dtype=np.int64) for v in (xi, yi, zi))
    for name, v, n in (("x'", xi, spec.n_x), ("y'", yi, spec.n_y), ("z'", zi, spec.n_z)):
        if np.any(v < 0) or np.any(v >= n):
            raise GridBoundsError(f"{name} index out of range [0, {n})")
    out = zi * (spec.n_x * spec.n_y) + yi * spec.n_x + xi
    return int(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class BevMap:
    """Dense BEV features shaped (n_z * channels, n_y, n_x), z-major channels.

    ``counts`` (n_z, n_y, n_x) holds how many voxels were averaged per cell;
    cells never written are exactly zero.
    """

    spec: BevSpec
    data: np.ndarray
    counts: np.ndarray

    @property
    def channels(self) -> int:
        return self.data.shape[0] // self.spec.n_z

    def volume(self) -> np.ndarray:
        """Unflattened (n_z, channels, n_y, n_x) view."""
        return self.data.reshape(self.spec.n_z, self.channels, self.spec.n_y, self.spec.n_x)


def scatter_to_bev(t: SparseVoxelTensor, gspec: GridSpec, bspec: BevSpec) -> BevMap:
    """Project voxels to Cartesian cells and average features sharing a cell.

    Averaging is a count-weighted running mean applied in rounds: round k
    folds the k-th voxel of every cell into that cell's mean.
    """
    if t.spec != gspec:
        raise GeometryError("tensor grid differs from the given polar grid")
    c = t.dim
    n_cells = bspec.n_cells
    mean = np.zeros((n_cells, c), np.float64)
    counts = np.zeros(n_cells, np.int64)
    if len(t):
        xyz = polar_indices_to_world(t.coords, gspec)
        idx, valid = world_to_bev_indices(xyz, bspec)
        lin = linear_index(idx[valid, 0], idx[valid, 1], idx[valid, 2], bspec)
        feats = t.features[valid].astype(np.float64)
        order = np.argsort(lin, kind="stable")
        lin, feats = lin[order], feats[order]
        starts = np.searchsorted(lin, lin, side="left")
        rank = np.arange(len(lin)) - starts
        for k in range(int(rank.max()) + 1 if len(rank) else 0):
            sel = rank == k
            cells = lin[sel]
            mean[cells] += (feats[sel] - mean[cells]) / (k + 1)
            counts[cells] += 1
    vol = mean.reshape(bspec.n_z, bspec.n_y, bspec.n_x, c).transpose(0, 3, 1, 2)
    data = np.ascontiguousarray(vol).reshape(bspec.n_z * c, bspec.n_y, bspec.n_x)
    return BevMap(bspec, data, counts.reshape(bspec.n_z, bspec.n_y, bspec.n_x))


# --- sector buffer --------------------------------------------------------------


class BufferConsistencyError(ValueError):
    pass


@dataclass(frozen=True)
class SectorBuffer:
    """Latest post-backbone features per azimuth slot, tagged with their rotation."""

    n_slots: int
    slots: dict = field(default_factory=dict)  # slot -> (rotation, SparseVoxelTensor)

    def __post_init__(self):
        if self.n_slots < 1:
            raise ValueError("buffer needs at least one slot")

    @property
    def occupancy(self) -> int:
        return len(self.slots)

    def get(self, slot: int):
        return self.slots.get(slot)


def buffer_insert(b: SectorBuffer, slot: int, rotation: int, t: SparseVoxelTensor) -> SectorBuffer:
    """Return a buffer whose ``slot`` holds ``t``; any older entry there is evicted."""
    if not 0 <= slot < b.n_slots:
        raise ValueError(f"slot {slot} outside [0, {b.n_slots})")
    slots = dict(b.slots)
    slots[slot] = (rotation, t)
    return SectorBuffer(b.n_slots, slots)


def buffer_without(b: SectorBuffer, slot: int) -> SectorBuffer:
    """Copy of ``b`` with ``slot`` emptied."""
    return SectorBuffer(b.n_slots, {k: v for k, v in b.slots.items() if k != slot})


def buffer_assemble(b: SectorBuffer, current: SparseVoxelTensor) -> SparseVoxelTensor:
    """Current sector features plus every buffered sector, canonically sorted."""
    current_slots = set(current.sector_ids().tolist())
    clash = current_slots & set(b.slots)
    if clash:
        raise BufferConsistencyError(f"slots {sorted(clash)} are both current and buffered")
    parts = [current] + [b.slots[s][1] for s in sorted(b.slots)]
    parts = [p for p in parts if len(p) or p is current]
    return concat(parts)
