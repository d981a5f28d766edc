"""Coordinate distortion and effective-receptive-field measurements.

Distortion compares pairwise distances of the same points in Cartesian and
polar coordinates. The ERF study tracks which voxels become active as
occupancy passes through down/up sampling stacks, weighting each voxel by
its physical volume.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass

import numpy as np

from .bev import BevSpec
from .core import GridBoundsError, GridSpec

PLANES = ("r-theta", "r-z", "theta-z")
MIN_PAIR_DISTANCE = 1e-9


class InsufficientDataError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


class UndefinedRatioError(ValueError):
    pass


# --- distortion ---------------------------------------------------------------


def _polar(points: np.ndarray) -> np.ndarray:
    r = np.hypot(points[:, 0], points[:, 1])
    theta = np.arctan2(points[:, 1], points[:, 0])
    return np.stack([r, theta, points[:, 2]], axis=1)


def _sample(points, sample_m: int, seed: int) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    pts = pts.reshape(len(pts), -1)[:, :3]
    if len(pts) < 2:
        raise InsufficientDataError("need at least two points")
    if sample_m < 2 or sample_m > len(pts):
        raise ValueError(f"sample_m must lie in [2, {len(pts)}], got {sample_m}")
    if sample_m == len(pts):
        return pts
    rng = np.random.default_rng(seed)
    return pts[np.sort(rng.choice(len(pts), sample_m, replace=False))]


def _pair_index(m: int):
    return np.triu_indices(m, 1)


def delta_l2_distortion(points, sample_m: int | None = None, seed: int = 0) -> float:
    """Mean |‖x_i - x_j‖ - ‖p_i - p_j‖| over all pairs of a seeded subsample.

    ``p`` is (r, theta, z) used as a plain 3-vector.
    """
    pts = _sample(points, sample_m or len(points), seed)
    pol = _polar(pts)
    i, j = _pair_index(len(pts))
    d_cart = np.linalg.norm(pts[i] - pts[j], axis=1)
    d_pol = np.linalg.norm(pol[i] - pol[j], axis=1)
    return float(np.mean(np.abs(d_cart - d_pol)))


@dataclass(frozen=True)
class DistortionReport:
    delta_l2_mean: float
    plane_std: dict
    plane_percent: dict
    n_points: int

    def rows(self):
        return [
            {"plane": k, "std": self.plane_std[k], "percent": self.plane_percent[k]}
            for k in PLANES
        ]


def plane_views(points, units=None) -> dict:
    """Per plane, the (Cartesian, polar) 2D coordinates compared for distortion.

    ``units`` = (dr, dtheta, dz) rescales polar axes to voxel index units;
    Cartesian x and y are then measured in dr and z in dz, so one voxel is
    one unit on every axis.
    """
    pts = np.asarray(points, dtype=np.float64)[:, :3]
    pol = _polar(pts)
    dr, dth, dz = units if units is not None else (1.0, 1.0, 1.0)
    x, y, z = pts[:, 0] / dr, pts[:, 1] / dr, pts[:, 2] / dz
    r, th, zp = pol[:, 0] / dr, pol[:, 1] / dth, pol[:, 2] / dz
    return {
        "r-theta": (np.stack([x, y], 1), np.stack([r, th], 1)),
        "r-z": (np.stack([x, z], 1), np.stack([r, zp], 1)),
        "theta-z": (np.stack([y, z], 1), np.stack([th, zp], 1)),
    }


def _ratio_std(cart: np.ndarray, pol: np.ndarray):
    i, j = _pair_index(len(cart))
    den = np.linalg.norm(cart[i] - cart[j], axis=1)
    num = np.linalg.norm(pol[i] - pol[j], axis=1)
    ok = den >= MIN_PAIR_DISTANCE
    if not ok.any():
        return None
    return float(np.std(num[ok] / den[ok]))


def plane_distortion(points, sample_m: int = 1000, seed: int = 0, units=None) -> DistortionReport:
    """Std of the polar/Cartesian distance ratio in each of three planes.

    Planes pair (x, y) with (r, theta), (x, z) with (r, z) and (y, z) with
    (theta, z). Pairs whose Cartesian distance is below 1e-9 are skipped.
    Percentages are each plane's share of the summed std.
    """
    pts = _sample(points, min(sample_m, max(len(points), 2)), seed)
    stds = {k: _ratio_std(c, p) for k, (c, p) in plane_views(pts, units).items()}
    if all(v is None for v in stds.values()):
        raise DegenerateInputError("every sampled pair is degenerate in every plane")
    stds = {k: (0.0 if v is None else v) for k, v in stds.items()}
    total = sum(stds.values())
    if total > 0:
        pct = {k: 100.0 * v / total for k, v in stds.items()}
    else:
        pct = {k: 0.0 for k in stds}
    return DistortionReport(delta_l2_distortion(pts), stds, pct, len(pts))


def write_distortion_csv(report: DistortionReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["plane", "std", "percent"])
        w.writeheader()
        for row in report.rows():
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


# --- voxel volumes ------------------------------------------------------------


def voxel_volume(j: int, gspec: GridSpec) -> float:
    """Volume of an annular wedge voxel in radial bin ``j``."""
    if not 0 <= j < gspec.n_r:
        raise GridBoundsError(f"radial index {j} outside [0, {gspec.n_r})")
    r = gspec.r_offset + j * gspec.dr
    return 0.5 * ((r + gspec.dr) ** 2 - r**2) * gspec.dtheta * gspec.dz


def voxel_volumes(gspec: GridSpec) -> np.ndarray:
    """(n_r,) volumes of every radial bin, same formula as :func:`voxel_volume`."""
    r = gspec.r_offset + np.arange(gspec.n_r) * gspec.dr
    return 0.5 * ((r + gspec.dr) ** 2 - r**2) * gspec.dtheta * gspec.dz


def shell_volume(gspec: GridSpec) -> float:
    """Closed-form volume of the region the grid covers."""
    return 0.5 * (gspec.r_max**2 - gspec.r_offset**2) * gspec.n_theta * gspec.dtheta * (
        gspec.n_z * gspec.dz
    )


# --- effective receptive field --------------------------------------------------


class Geometry(str, enum.Enum):
    CARTESIAN3D = "cartesian3d"
    POLAR3D = "polar3d"
    POLAR_DECOMPOSED = "polar_decomposed"


@dataclass(frozen=True)
class ErfLayerSpec:
    """Stack of ``depth`` strided down convolutions followed by ``depth`` unpoolings.

    Full 3D geometries use a k^3 kernel. The decomposed geometry splits each
    down convolution into a (1, k, k) kernel on (r, z) and a (k, 1, 1)
    kernel on theta, with the stride split the same way. Mask axes are
    (theta, r, z) for polar grids and (x, y, z) for Cartesian ones.
    """

    geometry: Geometry
    depth: int = 1
    kernel: int = 3
    stride: int = 2

    def __post_init__(self):
        object.__setattr__(self, "geometry", Geometry(self.geometry))
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("kernel must be odd and positive")
        if self.stride < 1:
            raise ValueError("stride must be positive")

    def factors(self):
        """(kernel, stride) triples applied in order by one down step."""
        k, s = self.kernel, self.stride
        if self.geometry is Geometry.POLAR_DECOMPOSED:
            return [((1, k, k), (1, s, s)), ((k, 1, 1), (s, 1, 1))]
        return [((k, k, k), (s, s, s))]


def dilate(mask: np.ndarray, kernel, stride=(1, 1, 1)) -> np.ndarray:
    """Occupancy through a sparse conv: output o is active if any input
    o*stride + t - kernel//2 (t over the kernel) is active."""
    mask = np.asarray(mask, dtype=bool)
    kernel, stride = tuple(kernel), tuple(stride)
    pad = [k // 2 for k in kernel]
    out_shape = tuple(-(-n // s) for n, s in zip(mask.shape, stride))
    hi = [o * s + k for o, s, k in zip(out_shape, stride, kernel)]
    padded = np.zeros(hi, bool)
    region = tuple(slice(p, p + n) for p, n in zip(pad, mask.shape))
    padded[region] = mask
    out = np.zeros(out_shape, bool)
    for t in np.ndindex(*kernel):
        sl = tuple(slice(ti, ti + o * s, s) for ti, o, s in zip(t, out_shape, stride))
        out |= padded[sl]
    return out


def unpool(mask: np.ndarray, stride, fine_shape) -> np.ndarray:
    """Nearest-neighbour upsampling: fine voxel i copies coarse voxel i // stride."""
    out = np.asarray(mask, dtype=bool)
    for axis, s in enumerate(stride):
        out = np.repeat(out, s, axis=axis)
    return out[tuple(slice(0, n) for n in fine_shape)]


def propagate_active_set(active: np.ndarray, layer: ErfLayerSpec) -> np.ndarray:
    """Occupancy after the layer stack, returned at the input resolution."""
    mask = np.asarray(active, dtype=bool)
    shapes = []
    for _ in range(layer.depth):
        for kernel, stride in layer.factors():
            shapes.append((mask.shape, stride))
            mask = dilate(mask, kernel, stride)
    for fine_shape, stride in reversed(shapes):
        mask = unpool(mask, stride, fine_shape)
    return mask


@dataclass(frozen=True)
class ErfEntry:
    geometry: str
    depth: int
    ratio: float
    v_fg: float
    v_total: float


def erf_ratio(active: np.ndarray, foreground: np.ndarray, volumes) -> tuple[float, float, float]:
    """(R, V_fg, V_total) with per-voxel ``volumes`` broadcast over the mask."""
    active = np.asarray(active, dtype=bool)
    foreground = np.asarray(foreground, dtype=bool)
    if active.shape != foreground.shape:
        raise ValueError("active and foreground masks differ in shape")
    vol = np.broadcast_to(np.asarray(volumes, dtype=np.float64), active.shape)
    v_total = float(vol[active].sum())
    if not active.any():
        raise UndefinedRatioError("empty active set")
    v_fg = float(vol[active & foreground].sum())
    return v_fg / v_total, v_fg, v_total


def polar_volume_grid(gspec: GridSpec) -> np.ndarray:
    return voxel_volumes(gspec)[None, :, None]


def cartesian_volume(cspec: BevSpec) -> float:
    return cspec.dx * cspec.dy * cspec.dz


def _inside_boxes(xyz: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    inside = np.zeros(len(xyz), bool)
    for b in np.asarray(boxes, dtype=np.float64).reshape(-1, 6):
        inside |= np.all((xyz >= b[:3]) & (xyz <= b[3:]), axis=1)
    return inside


def polar_masks(points, boxes, gspec: GridSpec):
    """Occupancy and foreground masks on a polar grid, axes (theta, r, z)."""
    pts = np.asarray(points, dtype=np.float64)[:, :3]
    pol = _polar(pts)
    idx = np.floor(
        (pol - [gspec.r_offset, gspec.theta_offset, gspec.z_offset])
        / [gspec.dr, gspec.dtheta, gspec.dz]
    ).astype(np.int64)
    ok = np.all((idx >= 0) & (idx < [gspec.n_r, gspec.n_theta, gspec.n_z]), axis=1)
    occ = np.zeros((gspec.n_theta, gspec.n_r, gspec.n_z), bool)
    occ[idx[ok, 1], idx[ok, 0], idx[ok, 2]] = True
    th, r, z = np.meshgrid(
        gspec.theta_offset + (np.arange(gspec.n_theta) + 0.5) * gspec.dtheta,
        gspec.r_offset + (np.arange(gspec.n_r) + 0.5) * gspec.dr,
        gspec.z_offset + (np.arange(gspec.n_z) + 0.5) * gspec.dz,
        indexing="ij",
    )
    centers = np.stack([r * np.cos(th), r * np.sin(th), z], -1).reshape(-1, 3)
    fg = _inside_boxes(centers, boxes).reshape(occ.shape)
    return occ, fg


def cartesian_masks(points, boxes, cspec: BevSpec):
    """Occupancy and foreground masks on a Cartesian grid, axes (x, y, z)."""
    pts = np.asarray(points, dtype=np.float64)[:, :3]
    idx = np.floor(
        (pts - [cspec.x_offset, cspec.y_offset, cspec.z_offset]) / [cspec.dx, cspec.dy, cspec.dz]
    ).astype(np.int64)
    ok = np.all((idx >= 0) & (idx < [cspec.n_x, cspec.n_y, cspec.n_z]), axis=1)
    occ = np.zeros((cspec.n_x, cspec.n_y, cspec.n_z), bool)
    occ[idx[ok, 0], idx[ok, 1], idx[ok, 2]] = True
    x, y, z = np.meshgrid(
        cspec.x_offset + (np.arange(cspec.n_x) + 0.5) * cspec.dx,
        cspec.y_offset + (np.arange(cspec.n_y) + 0.5) * cspec.dy,
        cspec.z_offset + (np.arange(cspec.n_z) + 0.5) * cspec.dz,
        indexing="ij",
    )
    fg = _inside_boxes(np.stack([x, y, z], -1).reshape(-1, 3), boxes).reshape(occ.shape)
    return occ, fg


def erf_study(points, boxes, gspec: GridSpec, cspec: BevSpec, depths=range(0, 7),
              kernel: int = 3, stride: int = 2) -> dict[str, list[ErfEntry]]:
    """Foreground ratio per depth for the three geometries on one scene."""
    p_occ, p_fg = polar_masks(points, boxes, gspec)
    c_occ, c_fg = cartesian_masks(points, boxes, cspec)
    p_vol, c_vol = polar_volume_grid(gspec), cartesian_volume(cspec)
    out: dict[str, list[ErfEntry]] = {g.value: [] for g in Geometry}
    for depth in depths:
        for g in Geometry:
            spec = ErfLayerSpec(g, depth, kernel, stride)
            if g is Geometry.CARTESIAN3D:
                occ, fg, vol = c_occ, c_fg, c_vol
            else:
                occ, fg, vol = p_occ, p_fg, p_vol
            ratio, v_fg, v_total = erf_ratio(propagate_active_set(occ, spec), fg, vol)
            out[g.value].append(ErfEntry(g.value, depth, ratio, v_fg, v_total))
    return out


ERF_COLUMNS = ("geometry", "depth", "ratio", "v_fg", "v_total")


def write_erf_csv(study: dict[str, list[ErfEntry]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ERF_COLUMNS)
        for entries in study.values():
            for e in entries:
                w.writerow([e.geometry, e.depth, repr(e.ratio), repr(e.v_fg), repr(e.v_total)])


def annulus_cloud(n: int, r_min: float, r_max: float, z_min: float, z_max: float,
                  seed: int = 0) -> np.ndarray:
    """Points uniform by area in an annulus and uniform in z; intensity zero."""
    if not 0 <= r_min < r_max or not z_min < z_max:
        raise ValueError("annulus ranges must be ordered")
    rng = np.random.default_rng(seed)
    r = np.sqrt(rng.uniform(r_min**2, r_max**2, n))
    theta = rng.uniform(-math.pi, math.pi, n)
    z = rng.uniform(z_min, z_max, n)
    return np.stack([r * np.cos(theta), r * np.sin(theta), z, np.zeros(n)], axis=1)
