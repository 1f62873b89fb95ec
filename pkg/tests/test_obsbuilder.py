import math

import numpy as np
import pytest

from covpath import belief as bl
from covpath import lidar
from covpath import obsbuilder as ob
from covpath import worldmodel as wm

RES = wm.RESOLUTION


def known_free_belief(n: int) -> bl.BeliefState:
    b = bl.new_belief((n, n), RES)
    b.obstacle_map[:] = bl.KNOWN_FREE
    return b


def max_range_scan(n_rays: int, max_range: float = 3.5) -> lidar.LidarScan:
    return lidar.LidarScan(
        ranges=np.full(n_rays, max_range), hit_flags=np.zeros(n_rays, dtype=bool)
    )


def test_scale_sides_default_config() -> None:
    cfg = ob.MultiScaleConfig()
    assert cfg.scale_sides == pytest.approx((1.2, 4.8, 19.2, 76.8))
    assert cfg.scale_factors == (1, 4, 16, 64)


def test_fully_known_free_belief_all_zero() -> None:
    # Small scales so every sample point stays inside the known-free area.
    cfg = ob.MultiScaleConfig(m=2, s=2, grid=8)
    b = known_free_belief(80)
    pose = wm.Pose(1.5, 1.5, 0.7)
    o = ob.build_observation(b, pose, max_range_scan(24), cfg)
    assert not o.coverage.any()
    assert not o.obstacles.any()
    assert not o.frontiers.any()
    assert np.allclose(o.lidar, 1.0)


def test_wall_ahead_lands_in_top_rows() -> None:
    # Agent faces +y; a wall 0.35 m ahead must appear in the upper image half
    # of every scale that resolves it, and never behind the agent.
    cfg = ob.MultiScaleConfig(m=2, s=4, grid=32)
    n = 214  # 8 m a side
    b = known_free_belief(n)
    wall_row = int(4.35 / RES)
    b.obstacle_map[wall_row, :] = bl.KNOWN_OBSTACLE
    pose = wm.Pose(4.0, 4.0, math.pi / 2)
    o = ob.build_observation(b, pose, max_range_scan(24), cfg)
    for i in range(cfg.m):
        layer = o.obstacles[i]
        assert layer[: cfg.grid // 2].sum() > 0
        assert layer[cfg.grid // 2 :].sum() == 0


def test_unknown_encodes_half_out_of_map_one() -> None:
    cfg = ob.MultiScaleConfig(m=1, s=4, grid=32)
    b = bl.new_belief((40, 40), RES)  # 1.5 m map, crop side 1.2 m
    pose = wm.Pose(0.75, 0.75, 0.0)
    o = ob.build_observation(b, pose, max_range_scan(4), cfg)
    assert np.allclose(o.obstacles[0], 0.5)
    far = wm.Pose(0.08, 0.75, 0.0)  # crop hangs past the map edge
    o2 = ob.build_observation(b, far, max_range_scan(4), cfg)
    assert (o2.obstacles[0] == 1.0).any()
    assert o2.obstacles[0].max() == 1.0


def test_downscale_frontier_or_pooling_exact() -> None:
    rng = np.random.default_rng(3)
    for factor in (1, 2, 4, 8):
        for _ in range(25):
            h, w = rng.integers(5, 40, size=2)
            fine = rng.random((h, w)) < 0.05
            coarse = ob.downscale_frontier(fine, factor)
            out_h = math.ceil(h / factor)
            out_w = math.ceil(w / factor)
            assert coarse.shape == (out_h, out_w)
            for i in range(out_h):
                for j in range(out_w):
                    block = fine[i * factor : (i + 1) * factor, j * factor : (j + 1) * factor]
                    assert coarse[i, j] == block.any()


def test_downscale_frontier_single_cell_persists() -> None:
    fine = np.zeros((64, 64), dtype=bool)
    fine[17, 42] = True
    for factor in (1, 4, 16, 64):
        coarse = ob.downscale_frontier(fine, factor)
        assert coarse.sum() == 1
    assert ob.downscale_frontier(np.zeros((16, 16), dtype=bool), 4).sum() == 0


def test_observation_shape_independent_of_world_size() -> None:
    cfg = ob.MultiScaleConfig()
    small = known_free_belief(128)  # 4.8 m
    large = known_free_belief(512)  # 19.2 m
    scan = max_range_scan(24)
    o1 = ob.build_observation(small, wm.Pose(2.4, 2.4, 0.0), scan, cfg)
    o2 = ob.build_observation(large, wm.Pose(9.6, 9.6, 0.0), scan, cfg)
    assert o1.coverage.shape == o2.coverage.shape == (4, 32, 32)
    assert o1.obstacles.shape == o2.obstacles.shape
    assert o1.frontiers.shape == o2.frontiers.shape


def test_rotation_of_world_and_pose_preserves_observation() -> None:
    rng = np.random.default_rng(12)
    cfg = ob.MultiScaleConfig(m=2, s=4, grid=32)
    n = 160
    b = bl.new_belief((n, n), RES)
    b.obstacle_map[:] = bl.KNOWN_FREE
    blob = rng.random((n, n)) < 0.02
    b.obstacle_map[blob] = bl.KNOWN_OBSTACLE
    b.coverage_map[:] = (rng.random((n, n)) < 0.3) & ~blob
    b.covered_cells = int(b.coverage_map.sum())

    rot = bl.new_belief((n, n), RES)
    for r in range(n):
        for c in range(n):
            rot.obstacle_map[c, n - 1 - r] = b.obstacle_map[r, c]
            rot.coverage_map[c, n - 1 - r] = b.coverage_map[r, c]
    rot.covered_cells = int(rot.coverage_map.sum())

    size = n * RES
    x, y, heading = 2.77, 3.11, 0.42
    scan = max_range_scan(8)
    o1 = ob.build_observation(b, wm.Pose(x, y, heading), scan, cfg)
    o2 = ob.build_observation(rot, wm.Pose(size - y, x, heading + math.pi / 2), scan, cfg)
    # Finest scale: nearest-neighbor sampling commutes with the 90-degree
    # rotation except for boundary-of-cell jitter.
    agree = np.mean(o1.obstacles[0] == o2.obstacles[0])
    assert agree > 0.99
    agree_cov = np.mean(o1.coverage[0] == o2.coverage[0])
    assert agree_cov > 0.99


def test_lidar_normalized_and_history_passthrough() -> None:
    cfg = ob.MultiScaleConfig(m=1, s=4, grid=8)
    b = known_free_belief(40)
    scan = lidar.LidarScan(ranges=np.array([0.0, 1.75, 3.5]), hit_flags=np.ones(3, dtype=bool))
    hist = np.array([[0.1, -0.2], [0.3, 0.4]], dtype=np.float32)
    o = ob.build_observation(b, wm.Pose(0.75, 0.75, 0.0), scan, cfg, history=hist)
    assert np.allclose(o.lidar, [0.0, 0.5, 1.0])
    assert np.allclose(o.action_history, [0.1, -0.2, 0.3, 0.4])


def test_dump_round_trip() -> None:
    cfg = ob.MultiScaleConfig(m=2, s=4, grid=16)
    b = known_free_belief(120)
    b.coverage_map[30:50, 30:50] = True
    b.covered_cells = 400
    scan = max_range_scan(24)
    hist = np.linspace(-1, 1, 20).astype(np.float32)
    o = ob.build_observation(b, wm.Pose(2.0, 2.0, 1.0), scan, cfg, history=hist)
    buf = ob.dump_observation(o, cfg)
    header, body = ob.load_observation(buf)
    assert header == {"m": 2, "grid": 16, "n_rays": 24, "k": 10, "version": 1}
    per_layer = 2 * 16 * 16
    assert np.allclose(body[: per_layer], o.coverage.ravel())
    assert np.allclose(body[per_layer : 2 * per_layer], o.obstacles.ravel())
    assert np.allclose(body[2 * per_layer : 3 * per_layer], o.frontiers.ravel())
    assert np.allclose(body[3 * per_layer : 3 * per_layer + 24], o.lidar)
    assert np.allclose(body[-20:], hist)


def test_values_always_in_unit_range() -> None:
    rng = np.random.default_rng(5)
    cfg = ob.MultiScaleConfig(m=3, s=4, grid=16)
    for _ in range(10):
        n = int(rng.integers(60, 200))
        b = bl.new_belief((n, n), RES)
        b.obstacle_map[:] = rng.integers(0, 3, size=(n, n)).astype(np.uint8)
        b.coverage_map[:] = (rng.random((n, n)) < 0.4) & (b.obstacle_map != bl.KNOWN_OBSTACLE)
        b.covered_cells = int(b.coverage_map.sum())
        x, y = rng.uniform(0.2, n * RES - 0.2, size=2)
        o = ob.build_observation(
            b, wm.Pose(float(x), float(y), float(rng.uniform(-3, 3))), max_range_scan(24), cfg
        )
        for layer in (o.coverage, o.obstacles, o.frontiers, o.lidar):
            assert layer.min() >= 0.0 and layer.max() <= 1.0
