"""Seeded synthetic LiDAR-like scenes: ground points plus box-shaped objects."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SceneConfig:
    """Scene layout; sizes in meters, ``ground_density`` in points per square meter."""

    n_points: int = 4000  # points spread over all objects
    n_objects: int = 8
    size_min: tuple[float, float, float] = (1.5, 1.5, 1.2)
    size_max: tuple[float, float, float] = (4.5, 2.5, 2.0)
    r_min: float = 3.0
    r_max: float = 30.0
    ground_density: float = 0.5
    ground_z: float = -1.5
    intensity_range: tuple[float, float] = (0.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        if self.n_points < 0 or self.n_objects < 0:
            raise ValueError("counts must be >= 0")
        if self.ground_density < 0:
            raise ValueError("ground_density must be >= 0")
        if not 0 <= self.r_min < self.r_max:
            raise ValueError("radial range must satisfy 0 <= r_min < r_max")
        if any(lo <= 0 or lo > hi for lo, hi in zip(self.size_min, self.size_max)):
            raise ValueError("object sizes must satisfy 0 < size_min <= size_max")
        if self.intensity_range[0] > self.intensity_range[1]:
            raise ValueError("intensity range must be ordered")


@dataclass(frozen=True)
class Scene:
    points: np.ndarray  # (n, 4) x, y, z, intensity
    boxes: np.ndarray  # (k, 6) x_min, y_min, z_min, x_max, y_max, z_max
    labels: np.ndarray  # (n,) box index or -1 for ground


def generate_scene(cfg: SceneConfig) -> Scene:
    rng = np.random.default_rng(cfg.seed)
    lo_i, hi_i = cfg.intensity_range

    # boxes rest on the ground, centers uniform by area in the annulus
    r = np.sqrt(rng.uniform(cfg.r_min**2, cfg.r_max**2, cfg.n_objects))
    theta = rng.uniform(-math.pi, math.pi, cfg.n_objects)
    size = rng.uniform(cfg.size_min, cfg.size_max, size=(cfg.n_objects, 3))
    center = np.stack([r * np.cos(theta), r * np.sin(theta), cfg.ground_z + size[:, 2] / 2], 1)
    boxes = np.concatenate([center - size / 2, center + size / 2], axis=1)

    per_box = np.zeros(cfg.n_objects, np.int64)
    if cfg.n_objects:
        per_box = np.bincount(rng.integers(0, cfg.n_objects, cfg.n_points), minlength=cfg.n_objects)
    parts, labels = [], []
    for k, count in enumerate(per_box):
        xyz = rng.uniform(boxes[k, :3], boxes[k, 3:], size=(count, 3))
        parts.append(np.concatenate([xyz, rng.uniform(lo_i, hi_i, (count, 1))], 1))
        labels.append(np.full(count, k))

    area = math.pi * (cfg.r_max**2 - cfg.r_min**2)
    n_ground = int(round(cfg.ground_density * area))
    gr = np.sqrt(rng.uniform(cfg.r_min**2, cfg.r_max**2, n_ground))
    gt = rng.uniform(-math.pi, math.pi, n_ground)
    gz = cfg.ground_z + rng.normal(0.0, 0.02, n_ground)
    ground = np.stack([gr * np.cos(gt), gr * np.sin(gt), gz, rng.uniform(lo_i, hi_i, n_ground)], 1)
    parts.append(ground)
    labels.append(np.full(n_ground, -1))

    return Scene(np.concatenate(parts).reshape(-1, 4), boxes.reshape(-1, 6), np.concatenate(labels))
