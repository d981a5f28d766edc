"""Shared domain types: points, polar grid geometry and sparse voxel tensors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

TWO_PI = 2.0 * math.pi


class GeometryError(ValueError):
    pass


class GridBoundsError(IndexError):
    pass


class DuplicateCoordinateError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class InvalidPointError(ValueError):
    pass


@dataclass(frozen=True)
class Point:
    x: float
    y: float
    z: float
    intensity: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z, self.intensity)):
            raise InvalidPointError(f"non-finite point {self}")
        if not 0.0 <= self.intensity <= 1.0:
            raise InvalidPointError(f"intensity {self.intensity} outside [0, 1]")


@dataclass(frozen=True)
class PolarPoint:
    r: float
    theta: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.r, self.theta, self.z)):
            raise InvalidPointError(f"non-finite polar point {self}")
        if self.r < 0:
            raise InvalidPointError(f"negative radius {self.r}")
        if not -math.pi <= self.theta < math.pi:
            raise InvalidPointError(f"theta {self.theta} outside [-pi, pi)")


@dataclass(frozen=True)
class GridSpec:
    """Polar voxel grid: lower bound, voxel size and count per axis."""

    r_offset: float
    theta_offset: float
    z_offset: float
    dr: float
    dtheta: float
    dz: float
    n_r: int
    n_theta: int
    n_z: int

    def __post_init__(self):
        if min(self.dr, self.dtheta, self.dz) <= 0:
            raise GeometryError("voxel sizes must be positive")
        if min(self.n_r, self.n_theta, self.n_z) < 1:
            raise GeometryError("voxel counts must be >= 1")
        # strided grids may overhang by less than one bin
        if (self.n_theta - 1) * self.dtheta >= TWO_PI - 1e-9:
            raise GeometryError("theta span exceeds a full circle")

    @classmethod
    def full_circle(cls, r_min, r_max, n_r, n_theta, z_min, z_max, n_z):
        return cls(
            r_offset=float(r_min),
            theta_offset=-math.pi,
            z_offset=float(z_min),
            dr=(r_max - r_min) / n_r,
            dtheta=TWO_PI / n_theta,
            dz=(z_max - z_min) / n_z,
            n_r=int(n_r),
            n_theta=int(n_theta),
            n_z=int(n_z),
        )

    @classmethod
    def waymo(cls):
        # 468 x 468 x 32 over r in [0, 74.88) m, full azimuth, z in [-2, 4) m
        return cls.full_circle(0.0, 74.88, 468, 468, -2.0, 4.0, 32)

    @property
    def shape(self) -> tuple[int, int, int]:
        """Counts in (theta, r, z) order, the serialization order."""
        return (self.n_theta, self.n_r, self.n_z)

    @property
    def r_max(self) -> float:
        return self.r_offset + self.n_r * self.dr

    @property
    def z_max(self) -> float:
        return self.z_offset + self.n_z * self.dz

    @property
    def theta_max(self) -> float:
        return self.theta_offset + self.n_theta * self.dtheta

    def downsample(self, s_theta: int = 1, s_r: int = 1, s_z: int = 1) -> GridSpec:
        """Grid seen after striding; coarse voxel i covers fine voxels [i*s, i*s + s)."""
        return GridSpec(
            r_offset=self.r_offset,
            theta_offset=self.theta_offset,
            z_offset=self.z_offset,
            dr=self.dr * s_r,
            dtheta=self.dtheta * s_theta,
            dz=self.dz * s_z,
            n_r=-(-self.n_r // s_r),
            n_theta=-(-self.n_theta // s_theta),
            n_z=-(-self.n_z // s_z),
        )


class VoxelCoord(NamedTuple):
    sector_id: int
    i_theta: int
    i_r: int
    i_z: int


def _check_bounds(coords: np.ndarray, spec: GridSpec) -> None:
    if coords.size == 0:
        return
    limits = (None, spec.n_theta, spec.n_r, spec.n_z)
    names = ("sector_id", "i_theta", "i_r", "i_z")
    for axis, (name, limit) in enumerate(zip(names, limits)):
        col = coords[:, axis]
        if col.min() < 0 or (limit is not None and col.max() >= limit):
            bad = col[(col < 0) | ((col >= limit) if limit is not None else False)][0]
            raise GridBoundsError(f"{name}={bad} out of bounds (limit {limit})")


def serialization_keys(coords: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Vectorized :func:`serialization_key` over an (M, 4) coordinate array."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 4)
    _check_bounds(coords, spec)
    s, t, r, z = coords.T
    return ((s * spec.n_theta + t) * spec.n_r + r) * spec.n_z + z


def serialization_key(c: VoxelCoord, spec: GridSpec) -> int:
    """Position of a voxel in the azimuth-major (sector, theta, r, z) order."""
    return int(serialization_keys(np.asarray([tuple(c)]), spec)[0])


@dataclass(frozen=True, eq=False)
class SparseVoxelTensor:
    """Active voxel coordinates (M, 4) with one feature row each.

    Columns of ``coords`` are (sector_id, i_theta, i_r, i_z). Construction
    rejects duplicate coordinates; every operation in the package returns
    tensors in canonical (serialization key) order.
    """

    spec: GridSpec
    coords: np.ndarray
    features: np.ndarray
    keys: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        coords = np.ascontiguousarray(self.coords, dtype=np.int64).reshape(-1, 4)
        features = np.ascontiguousarray(self.features)
        if features.ndim != 2 or features.shape[0] != coords.shape[0]:
            raise ShapeError(
                f"features {features.shape} do not match {coords.shape[0]} coords"
            )
        keys = serialization_keys(coords, self.spec)
        if len(keys) > 1:
            order = np.sort(keys)
            dup = np.flatnonzero(order[1:] == order[:-1])
            if dup.size:
                first = coords[np.flatnonzero(keys == order[dup[0]])[0]]
                raise DuplicateCoordinateError(
                    f"duplicate voxel coordinate {VoxelCoord(*map(int, first))}"
                )
        for arr in (coords, features, keys):
            arr.flags.writeable = False
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "keys", keys)

    @classmethod
    def empty(cls, spec: GridSpec, dim: int, dtype=np.float64) -> SparseVoxelTensor:
        return cls(spec, np.zeros((0, 4), np.int64), np.zeros((0, dim), dtype))

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def is_canonical(self) -> bool:
        return bool(np.all(self.keys[1:] > self.keys[:-1]))

    def sector_ids(self) -> np.ndarray:
        return np.unique(self.coords[:, 0])

    def with_features(self, features: np.ndarray) -> SparseVoxelTensor:
        return SparseVoxelTensor(self.spec, self.coords, features)

    def select(self, mask: np.ndarray) -> SparseVoxelTensor:
        return SparseVoxelTensor(self.spec, self.coords[mask], self.features[mask])

    def sector(self, sector_id: int) -> SparseVoxelTensor:
        return self.select(self.coords[:, 0] == sector_id)

    def active_set(self) -> frozenset:
        return frozenset(map(tuple, self.coords.tolist()))

    def same_coords(self, other: SparseVoxelTensor) -> bool:
        return self.coords.shape == other.coords.shape and bool(
            np.array_equal(self.coords, other.coords)
        )


def sort_canonical(t: SparseVoxelTensor) -> SparseVoxelTensor:
    if t.is_canonical:
        return t
    order = np.argsort(t.keys, kind="stable")
    return SparseVoxelTensor(t.spec, t.coords[order], t.features[order])


def concat(parts: list[SparseVoxelTensor]) -> SparseVoxelTensor:
    """Concatenate tensors on a common grid and sort the result canonically."""
    if not parts:
        raise ValueError("nothing to concatenate")
    spec = parts[0].spec
    if any(p.spec != spec for p in parts):
        raise GeometryError("cannot concatenate tensors on different grids")
    coords = np.concatenate([p.coords for p in parts])
    features = np.concatenate([p.features for p in parts])
    return sort_canonical(SparseVoxelTensor(spec, coords, features))


@dataclass(frozen=True, eq=False)
class Sector:
    sector_id: int
    theta_lo: float
    theta_hi: float
    points: np.ndarray  # (n, 4): x, y, z, intensity
    timestamp: float  # ms since scan start

    def __post_init__(self):
        if not self.theta_lo < self.theta_hi:
            raise GeometryError("sector needs theta_lo < theta_hi")
