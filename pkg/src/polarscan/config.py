"""Strict JSON run and scene configuration.

Every level rejects unknown keys. ``PHIM_SEED`` in the environment, when
set, replaces the seed of any loaded config.

Run config schema (all keys optional, defaults in brackets)::

    {
      "grid": {"r_min": [0.0], "r_max": [24.0], "n_r": [48], "n_theta": [96],
               "z_min": [-2.0], "z_max": [4.0], "n_z": [16]},
      "bev": {"half_extent": [24.0], "n_xy": [96], "z_min": [-2.0], "z_max": [4.0], "n_z": [1]},
      "n_sectors": [4], "dim": [128], "state_dim": [16],
      "strides": [[1, 1, 1, 2, 1, 4]], "kernels": [[3, 3, 3, 3, 3, 5]],
      "seed": [0], "precision": ["f64"], "rotation_ms": [100.0]
    }

Scene config keys are the fields of :class:`polarscan.scene.SceneConfig`.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .bev import BevSpec
from .block import DEFAULT_KERNELS, DEFAULT_STRIDES, MODEL_DIM, STATE_DIM
from .core import GeometryError, GridSpec
from .scene import SceneConfig

SEED_ENV = "PHIM_SEED"
PRECISIONS = {"f32": np.float32, "f64": np.float64}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GridConfig:
    r_min: float = 0.0
    r_max: float = 24.0
    n_r: int = 48
    n_theta: int = 96
    z_min: float = -2.0
    z_max: float = 4.0
    n_z: int = 16

    def spec(self) -> GridSpec:
        return GridSpec.full_circle(self.r_min, self.r_max, self.n_r, self.n_theta,
                                    self.z_min, self.z_max, self.n_z)


@dataclass(frozen=True)
class BevConfig:
    half_extent: float = 24.0
    n_xy: int = 96
    z_min: float = -2.0
    z_max: float = 4.0
    n_z: int = 1

    def spec(self) -> BevSpec:
        return BevSpec.square(self.half_extent, self.n_xy, self.z_min, self.z_max, self.n_z)


@dataclass(frozen=True)
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    bev: BevConfig = field(default_factory=BevConfig)
    n_sectors: int = 4
    dim: int = MODEL_DIM
    state_dim: int = STATE_DIM
    strides: tuple[int, ...] = DEFAULT_STRIDES
    kernels: tuple[int, ...] = DEFAULT_KERNELS
    seed: int = 0
    precision: str = "f64"
    rotation_ms: float = 100.0

    def __post_init__(self):
        if self.n_sectors < 1:
            raise ConfigError("n_sectors must be >= 1")
        if self.dim < 1 or self.state_dim < 1:
            raise ConfigError("dim and state_dim must be >= 1")
        if len(self.strides) != 6 or len(self.kernels) != 6:
            raise ConfigError("strides and kernels need one entry per block (6)")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {sorted(PRECISIONS)}")
        if not self.rotation_ms > 0:
            raise ConfigError("rotation_ms must be positive")
        try:
            gspec, bspec = self.grid.spec(), self.bev.spec()
        except GeometryError as exc:
            raise ConfigError(str(exc)) from None
        check_extent(gspec, bspec)

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def grid_spec(self) -> GridSpec:
        return self.grid.spec()

    def bev_spec(self) -> BevSpec:
        return self.bev.spec()


def check_extent(gspec: GridSpec, bspec: BevSpec) -> None:
    """Reject polar grids reaching outside the BEV box, before any compute."""
    r = gspec.r_max
    if (-r < bspec.x_offset or r > bspec.x_max or -r < bspec.y_offset or r > bspec.y_max):
        raise ConfigError(f"polar radius {r} exceeds the BEV x/y extent")
    if gspec.z_offset < bspec.z_offset or gspec.z_max > bspec.z_max + 1e-9:
        raise ConfigError(
            f"polar z range [{gspec.z_offset}, {gspec.z_max}] exceeds BEV "
            f"[{bspec.z_offset}, {bspec.z_max}]"
        )


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for k, v in data.items():
        if k == "grid" and cls is RunConfig:
            v = _build(GridConfig, v, f"{where}.grid")
        elif k == "bev" and cls is RunConfig:
            v = _build(BevConfig, v, f"{where}.bev")
        elif isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from None


def _seed_override(cfg):
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return cfg
    try:
        seed = int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
    return dataclasses.replace(cfg, seed=seed)


def run_config_from_dict(data: dict) -> RunConfig:
    return _seed_override(_build(RunConfig, data, "run config"))


def scene_config_from_dict(data: dict) -> SceneConfig:
    return _seed_override(_build(SceneConfig, data, "scene config"))


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def load_run_config(path=None) -> RunConfig:
    return run_config_from_dict(_read_json(path) if path else {})


def load_scene_config(path=None) -> SceneConfig:
    return scene_config_from_dict(_read_json(path) if path else {})


def to_dict(cfg) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(cfg)))
