import numpy as np
import pytest

from polarscan.scene import SceneConfig, generate_scene


def test_scene_is_seeded():
    a, b = generate_scene(SceneConfig(seed=5)), generate_scene(SceneConfig(seed=5))
    assert np.array_equal(a.points, b.points) and np.array_equal(a.boxes, b.boxes)
    assert not np.array_equal(a.points, generate_scene(SceneConfig(seed=6)).points)


def test_object_points_lie_in_their_boxes():
    s = generate_scene(SceneConfig(n_points=800, n_objects=5, seed=2))
    for k, box in enumerate(s.boxes):
        pts = s.points[s.labels == k, :3]
        assert np.all(pts >= box[:3]) and np.all(pts <= box[3:])
    assert (s.labels >= 0).sum() == 800
    assert np.all((s.points[:, 3] >= 0) & (s.points[:, 3] <= 1))


def test_boxes_rest_on_the_ground_within_range():
    cfg = SceneConfig(n_objects=20, seed=1)
    s = generate_scene(cfg)
    np.testing.assert_allclose(s.boxes[:, 2], cfg.ground_z)
    centers = (s.boxes[:, :2] + s.boxes[:, 3:5]) / 2
    r = np.hypot(centers[:, 0], centers[:, 1])
    assert np.all((r >= cfg.r_min) & (r <= cfg.r_max))


def test_ground_only_scene():
    cfg = SceneConfig(n_points=100, n_objects=0, ground_density=0.1, seed=0)
    s = generate_scene(cfg)
    assert s.boxes.shape == (0, 6)
    assert len(s.points) == round(0.1 * np.pi * (cfg.r_max**2 - cfg.r_min**2))
    assert np.all(s.labels == -1)


@pytest.mark.parametrize("kwargs", [
    dict(n_points=-1), dict(ground_density=-0.1), dict(r_min=5.0, r_max=5.0),
    dict(size_min=(0.0, 1.0, 1.0)), dict(intensity_range=(1.0, 0.0)),
])
def test_scene_validation(kwargs):
    with pytest.raises(ValueError):
        SceneConfig(**kwargs)
