"""Azimuth sector splitting and polar voxelization with mean pooling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    TWO_PI,
    GeometryError,
    GridSpec,
    InvalidPointError,
    Point,
    PolarPoint,
    Sector,
    SparseVoxelTensor,
    sort_canonical,
)

RAW_FEATURES = 4  # r, theta, z, intensity


def wrap_theta(theta):
    """Map angles into the half-open range [-pi, pi)."""
    wrapped = np.mod(np.asarray(theta, dtype=np.float64) + math.pi, TWO_PI) - math.pi
    # fmod rounding can land exactly on +pi
    return np.where(wrapped >= math.pi, -math.pi, wrapped)


def cart_to_polar(p: Point) -> PolarPoint:
    if not all(math.isfinite(v) for v in (p.x, p.y, p.z)):
        raise InvalidPointError(f"non-finite point {p}")
    r = math.hypot(p.x, p.y)
    theta = float(wrap_theta(math.atan2(p.y, p.x)))
    return PolarPoint(r, theta, p.z)


def cart_to_polar_array(points: np.ndarray) -> np.ndarray:
    """(n, >=3) Cartesian points -> (n, 3) array of (r, theta, z)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.size and not np.all(np.isfinite(pts[:, :3])):
        row = int(np.flatnonzero(~np.all(np.isfinite(pts[:, :3]), axis=1))[0])
        raise InvalidPointError(f"non-finite point at row {row}")
    r = np.hypot(pts[:, 0], pts[:, 1])
    theta = wrap_theta(np.arctan2(pts[:, 1], pts[:, 0]))
    return np.stack([r, theta, pts[:, 2]], axis=1)


def as_point_array(points) -> np.ndarray:
    if isinstance(points, np.ndarray):
        arr = np.asarray(points, dtype=np.float64)
    else:
        arr = np.asarray(
            [(p.x, p.y, p.z, p.intensity) for p in points], dtype=np.float64
        )
    return arr.reshape(-1, 4)


def sector_index(theta: np.ndarray, n_sectors: int) -> np.ndarray:
    width = TWO_PI / n_sectors
    k = np.floor((np.asarray(theta) + math.pi) / width).astype(np.int64)
    return np.clip(k, 0, n_sectors - 1)


def split_sectors(points, n_sectors: int, rotation_ms: float = 100.0) -> list[Sector]:
    """Partition a full scan into ``n_sectors`` equal azimuth wedges.

    Sector k covers [-pi + k*w, -pi + (k+1)*w) with w = 2*pi/n and is
    released at k * rotation_ms / n.
    """
    if n_sectors < 1:
        raise ValueError("n_sectors must be >= 1")
    pts = as_point_array(points)
    theta = cart_to_polar_array(pts)[:, 1]
    k = sector_index(theta, n_sectors)
    width = TWO_PI / n_sectors
    sectors = []
    for s in range(n_sectors):
        sectors.append(
            Sector(
                sector_id=s,
                theta_lo=-math.pi + s * width,
                theta_hi=-math.pi + (s + 1) * width,
                points=pts[k == s],
                timestamp=s * rotation_ms / n_sectors,
            )
        )
    return sectors


@dataclass(frozen=True)
class VoxelStats:
    n_points: int
    n_voxels: int
    dropped: int


def voxelize_sector(
    s: Sector, spec: GridSpec, feature_dim: int = RAW_FEATURES, return_stats=False
):
    """Mean-pool the sector's points into occupied polar voxels.

    Per-point raw features are (r, theta, z, intensity), zero-padded to
    ``feature_dim``. Points outside the grid are dropped and counted.
    """
    if feature_dim < RAW_FEATURES:
        raise ValueError(f"feature_dim must be >= {RAW_FEATURES}")
    tol = 1e-9
    if s.theta_lo < spec.theta_offset - tol or s.theta_hi > spec.theta_max + tol:
        raise GeometryError(
            f"sector [{s.theta_lo}, {s.theta_hi}) outside grid azimuth range "
            f"[{spec.theta_offset}, {spec.theta_max})"
        )
    pts = as_point_array(s.points)
    polar = cart_to_polar_array(pts)
    raw = np.concatenate([polar, pts[:, 3:4]], axis=1)

    i_theta = np.floor((polar[:, 1] - spec.theta_offset) / spec.dtheta).astype(np.int64)
    i_r = np.floor((polar[:, 0] - spec.r_offset) / spec.dr).astype(np.int64)
    i_z = np.floor((polar[:, 2] - spec.z_offset) / spec.dz).astype(np.int64)
    keep = (
        (i_theta >= 0) & (i_theta < spec.n_theta)
        & (i_r >= 0) & (i_r < spec.n_r)
        & (i_z >= 0) & (i_z < spec.n_z)
    )
    coords = np.stack(
        [np.full(keep.sum(), s.sector_id, np.int64), i_theta[keep], i_r[keep], i_z[keep]],
        axis=1,
    )
    raw = raw[keep]

    uniq, inverse = np.unique(coords, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((len(uniq), RAW_FEATURES), np.float64)
    np.add.at(sums, inverse, raw)
    counts = np.bincount(inverse, minlength=len(uniq)).astype(np.float64)
    feats = np.zeros((len(uniq), feature_dim), np.float64)
    if len(uniq):
        feats[:, :RAW_FEATURES] = sums / counts[:, None]
    t = sort_canonical(SparseVoxelTensor(spec, uniq, feats))
    if return_stats:
        return t, VoxelStats(len(pts), len(t), int((~keep).sum()))
    return t


@dataclass(frozen=True, eq=False)
class FeatureLift:
    """Seeded affine map from raw voxel features to the model dimension."""

    weight: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray  # (out_dim,)

    @classmethod
    def create(cls, in_dim: int, out_dim: int, seed: int = 0) -> FeatureLift:
        rng = np.random.default_rng(seed)
        weight = rng.normal(0.0, 1.0 / math.sqrt(in_dim), size=(in_dim, out_dim))
        bias = rng.normal(0.0, 0.1, size=out_dim)
        return cls(weight, bias)

    def __call__(self, t: SparseVoxelTensor, dtype=np.float64) -> SparseVoxelTensor:
        if t.dim != self.weight.shape[0]:
            raise ValueError(f"lift expects {self.weight.shape[0]} features, got {t.dim}")
        return t.with_features((t.features @ self.weight + self.bias).astype(dtype))
