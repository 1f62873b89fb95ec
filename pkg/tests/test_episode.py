import io
import math
from dataclasses import replace

import numpy as np
import pytest

from covpath import episode as epi
from covpath import worldmodel as wm
from covpath.belief import KNOWN_OBSTACLE
from covpath.dynamics import Action, initial_state
from covpath.obsbuilder import dump_observation
from covpath.reward import Termination, total_variation

RES = wm.RESOLUTION


def empty_world(side_m: float) -> wm.WorldMap:
    n = round(side_m / RES)
    return wm.WorldMap(cells=np.zeros((n, n), dtype=np.uint8))


def room_source(side_m: float = 6.0) -> epi.MapSource:
    return epi.MapSource.of_world(empty_world(side_m))


def test_task_presets_physical_dimensions() -> None:
    mow = epi.task_config("mowing", room_source())
    assert (mow.coverage_radius, mow.dynamics.agent_radius) == (0.15, 0.15)
    assert (mow.dynamics.v_max, mow.dynamics.w_max, mow.dynamics.dt) == (0.26, 1.0, 0.5)
    assert (mow.lidar.n_rays, mow.lidar.max_range) == (24, 3.5)
    assert mow.lidar.fov == pytest.approx(math.pi)
    assert mow.reward.lambda_tv_incremental == 1.0

    exp = epi.task_config("exploration", room_source())
    assert (exp.coverage_radius, exp.dynamics.agent_radius) == (3.5, 0.15)
    assert (exp.dynamics.v_max, exp.lidar.n_rays, exp.lidar.max_range) == (0.26, 24, 3.5)
    assert exp.reward.lambda_tv_incremental == 0.2

    omni = epi.task_config("exploration-omni", room_source())
    assert (omni.coverage_radius, omni.dynamics.agent_radius) == (7.0, 0.08)
    assert (omni.dynamics.v_max, omni.lidar.n_rays, omni.lidar.max_range) == (0.5, 20, 7.0)
    assert omni.lidar.fov == pytest.approx(math.tau)

    with pytest.raises(ValueError):
        epi.task_config("harvesting", room_source())


def test_higher_order_preset_matches_real_robot() -> None:
    cfg = epi.task_config("mowing", room_source(), higher_order=True)
    dyn = cfg.dynamics
    assert (dyn.a_lin_max, dyn.a_ang_max, dyn.action_delay) == (0.5, 2.0, 0.05)
    assert (dyn.wheel_radius, dyn.wheel_base) == (0.1225, 0.465)
    assert cfg.action_history_len == 10
    ep, obs = epi.reset(cfg, 3)
    assert obs.action_history.shape == (20,)
    assert not obs.action_history.any()


def test_effective_max_steps_defaults_to_ten_patiences() -> None:
    cfg = epi.task_config("mowing", room_source())
    assert cfg.effective_max_steps == 10 * cfg.reward.truncation_steps
    assert epi.task_config("mowing", room_source(), max_steps=42).effective_max_steps == 42
    with pytest.raises(ValueError):
        epi.task_config("mowing", room_source(), max_steps=0)


def test_reset_determinism_bytes() -> None:
    cfg = epi.task_config("exploration", room_source(), noise="medium")
    a = epi.reset(cfg, 19)[1]
    b = epi.reset(cfg, 19)[1]
    assert dump_observation(a, cfg.obs) == dump_observation(b, cfg.obs)
    c = epi.reset(cfg, 20)[1]
    assert dump_observation(a, cfg.obs) != dump_observation(c, cfg.obs)


def test_reset_integrates_one_scan() -> None:
    cfg = epi.task_config("exploration-omni", room_source(6.0))
    ep, obs = epi.reset(cfg, 5)
    # 360 deg rays on a small empty room see every wall from the start.
    known_obstacles = np.argwhere(ep.belief.obstacle_map == KNOWN_OBSTACLE)
    assert len(known_obstacles) > 0
    h, w = ep.belief.shape
    on_border = (
        (known_obstacles[:, 0] == 0)
        | (known_obstacles[:, 0] == h - 1)
        | (known_obstacles[:, 1] == 0)
        | (known_obstacles[:, 1] == w - 1)
    )
    assert on_border.all()
    assert ep.initial_covered_area > 0
    assert ep.coverage_fraction > 0.5
    assert obs.obstacles.max() == pytest.approx(1.0)


def test_start_poses_are_collision_free_and_vary() -> None:
    cfg = epi.task_config("mowing", epi.MapSource.generated(map_seed=11))
    poses = []
    for seed in range(25):
        ep = epi.Episode(cfg, seed)
        p = ep.pose
        assert not ep.world.is_collision(p.x, p.y, cfg.dynamics.agent_radius)
        assert -math.pi <= p.heading <= math.pi
        poses.append((round(p.x, 6), round(p.y, 6)))
    assert len(set(poses)) > 10


def test_step_order_observation_reflects_current_scan() -> None:
    cfg = epi.task_config("mowing", room_source())
    ep, _ = epi.reset(cfg, 2)
    obs, _, _, _ = ep.step((0.7, 0.2))
    np.testing.assert_allclose(
        obs.lidar, ep.last_scan.ranges / cfg.lidar.max_range, atol=1e-6
    )
    # The agent's own cell was just swept, so the finest coverage crop is 1 there.
    assert obs.coverage[0, 16, 16] == pytest.approx(1.0)


def test_replay_determinism_record_stream() -> None:
    cfg = epi.task_config("mowing", epi.MapSource.generated(map_seed=7), noise="medium")
    rng = np.random.default_rng(123)
    actions = [(float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1))) for _ in range(40)]
    streams = []
    for _ in range(2):
        ep = epi.Episode(cfg, 31)
        for a in actions:
            if ep.finished:
                break
            ep.step(a)
        streams.append(ep.records)
    assert streams[0] == streams[1]


def test_idle_actions_truncate_at_patience() -> None:
    cfg = epi.task_config("mowing", room_source())
    cfg = replace(cfg, reward=replace(cfg.reward, truncation_steps=15))
    ep, _ = epi.reset(cfg, 4)
    status = Termination.CONTINUE
    while status is Termination.CONTINUE:
        _, _, status, rec = ep.step((0.0, 0.0))
        assert rec.a_new == 0.0
    assert status is Termination.TRUNCATED
    assert ep.step_count == 15
    fractions = {r.coverage_fraction for r in ep.records}
    assert len(fractions) == 1
    with pytest.raises(epi.SteppingFinishedEpisode):
        ep.step((0.0, 0.0))


def test_max_steps_cap_truncates_active_agent() -> None:
    cfg = epi.task_config("mowing", room_source(), max_steps=5)
    ep, _ = epi.reset(cfg, 6)
    status = Termination.CONTINUE
    while status is Termination.CONTINUE:
        _, _, status, _ = ep.step((1.0, 0.3))
    assert status is Termination.TRUNCATED
    assert ep.step_count == 5


def test_goal_reached_when_fraction_crosses_threshold() -> None:
    cfg = epi.task_config("exploration-omni", room_source(6.0))
    ep, _ = epi.reset(cfg, 9)
    _, _, status, rec = ep.step((0.0, 0.0))
    assert status is Termination.GOAL_REACHED
    assert rec.coverage_fraction >= cfg.reward.goal_coverage - 1e-12
    assert ep.finished


def test_full_throttle_straight_area_rate_near_one() -> None:
    # A fresh straight sweep gains 2*r*v_max*dt of area per step, so r_area
    # sits near lambda_area up to rasterization jitter.
    cfg = epi.task_config("mowing", room_source(12.0))
    ep, _ = epi.reset(cfg, 1)
    pose0 = wm.Pose(1.0, 6.0, 0.0)
    ep.state = initial_state(pose0)
    ep.pose_estimate = pose0
    rates = []
    for _ in range(60):
        _, breakdown, _, _ = ep.step((1.0, 0.0))
        rates.append(breakdown.r_area)
    settled = rates[2:]
    assert min(settled) > 0.8
    assert max(settled) < 1.2
    assert abs(float(np.mean(settled)) - 1.0) < 0.05


def test_coverage_conservation_exact_cells() -> None:
    for task, seed in (("mowing", 3), ("exploration", 4)):
        cfg = epi.task_config(task, epi.MapSource.generated(map_seed=21), noise="low")
        ep, _ = epi.reset(cfg, seed)
        rng = np.random.default_rng(seed)
        total = ep.initial_covered_area
        for _ in range(80):
            if ep.finished:
                break
            _, _, _, rec = ep.step((float(rng.uniform(0, 1)), float(rng.uniform(-1, 1))))
            total += rec.a_new
        assert round(total / RES**2) == ep.belief.covered_cells
        assert total == pytest.approx(ep.belief.covered_area, abs=1e-9)


def test_incremental_tv_matches_full_recompute() -> None:
    for task in ("mowing", "exploration"):
        cfg = epi.task_config(task, epi.MapSource.generated(map_seed=13), noise="low")
        ep, _ = epi.reset(cfg, 8)
        rng = np.random.default_rng(8)
        for k in range(60):
            if ep.finished:
                break
            ep.step((float(rng.uniform(0, 1)), float(rng.uniform(-1, 1))))
            if k % 10 == 0:
                assert ep._tv_cells == pytest.approx(
                    total_variation(ep.belief.coverage_map), abs=1e-6
                )
        assert ep._tv_cells == pytest.approx(
            total_variation(ep.belief.coverage_map), abs=1e-6
        )


def test_coverage_fraction_non_decreasing() -> None:
    cfg = epi.task_config("mowing", epi.MapSource.generated(map_seed=2))
    ep, _ = epi.reset(cfg, 14)
    rng = np.random.default_rng(14)
    for _ in range(120):
        if ep.finished:
            break
        ep.step((float(rng.uniform(-0.2, 1)), float(rng.uniform(-1, 1))))
    fractions = [r.coverage_fraction for r in ep.records]
    assert all(b >= a for a, b in zip(fractions, fractions[1:]))


def test_records_hold_true_pose_under_noise() -> None:
    cfg = epi.task_config("mowing", room_source(), noise="high")
    ep, _ = epi.reset(cfg, 17)
    _, _, _, rec = ep.step((0.8, 0.1))
    assert rec.pose == ep.state.pose
    est = ep.pose_estimate
    assert math.hypot(est.x - rec.pose.x, est.y - rec.pose.y) > 1e-6


def test_action_history_rolls_oldest_first() -> None:
    cfg = epi.task_config("mowing", room_source(), higher_order=True)
    ep, _ = epi.reset(cfg, 12)
    ep.step((0.25, -0.5))
    obs, _, _, _ = ep.step((0.75, 0.5))
    hist = obs.action_history.reshape(-1, 2)
    assert hist.shape == (10, 2)
    np.testing.assert_allclose(hist[-1], [0.75, 0.5], atol=1e-7)
    np.testing.assert_allclose(hist[-2], [0.25, -0.5], atol=1e-7)
    assert not hist[:-2].any()


def test_charge_time_extends_episode_clock() -> None:
    cfg = epi.task_config("mowing", room_source())
    ep, _ = epi.reset(cfg, 5)
    ep.step((0.5, 0.0))
    assert ep.elapsed_time == pytest.approx(0.5)
    ep.charge_time(2.25)
    assert ep.elapsed_time == pytest.approx(2.75)
    _, _, _, rec = ep.step((0.5, 0.0))
    assert rec.t == pytest.approx(3.25)
    with pytest.raises(ValueError):
        ep.charge_time(-0.1)


def test_trace_csv_roundtrip_and_byte_stability() -> None:
    cfg = epi.task_config("mowing", epi.MapSource.generated(map_seed=5), noise="low")
    ep, _ = epi.reset(cfg, 23)
    rng = np.random.default_rng(23)
    for _ in range(30):
        ep.step((float(rng.uniform(0, 1)), float(rng.uniform(-1, 1))))
    bufs = []
    for _ in range(2):
        out = io.StringIO()
        epi.write_trace(ep.records, out)
        bufs.append(out.getvalue())
    assert bufs[0] == bufs[1]
    header = bufs[0].splitlines()[0]
    assert header == ",".join(epi.STEP_CSV_COLUMNS)
    assert header.split(",")[:7] == ["t", "x", "y", "heading", "a_v", "a_w", "A_new"]
    back = epi.read_trace(io.StringIO(bufs[0]))
    assert back == ep.records


def test_read_trace_rejects_bad_header() -> None:
    with pytest.raises(ValueError):
        epi.read_trace(io.StringIO("nope,nope\n1,2\n"))


def test_map_source_file_and_world_round_trip(tmp_path) -> None:
    world = empty_world(4.0)
    path = tmp_path / "room.map"
    path.write_text(wm.save_map(world))
    cfg = epi.task_config("mowing", epi.MapSource.from_file(path))
    ep = epi.Episode(cfg, 1)
    assert np.array_equal(ep.world.cells, world.cells)

    by_world = epi.Episode(epi.task_config("mowing", epi.MapSource.of_world(world)), 1)
    assert np.array_equal(by_world.world.cells, world.cells)


def test_generated_map_source_seed_rules() -> None:
    pinned = epi.task_config("exploration", epi.MapSource.generated(map_seed=33))
    w1 = epi.Episode(pinned, 0).world
    w2 = epi.Episode(pinned, 999).world
    assert np.array_equal(w1.cells, w2.cells)

    driven = epi.task_config("exploration", epi.MapSource.generated())
    w3 = epi.Episode(driven, 6).world
    w4 = epi.Episode(driven, 6).world
    assert np.array_equal(w3.cells, w4.cells)
    w5 = epi.Episode(driven, 7).world
    assert w3.cells.shape != w5.cells.shape or not np.array_equal(w3.cells, w5.cells)


def test_environment_binding_surface() -> None:
    cfg = epi.task_config("exploration-omni", room_source(6.0))
    binding = epi.EnvironmentBinding(cfg)
    buf = binding.reset(77)
    n_cells = cfg.obs.m * cfg.obs.grid * cfg.obs.grid
    expected = 5 * 4 + 4 * (3 * n_cells + cfg.lidar.n_rays + 2 * cfg.action_history_len)
    assert isinstance(buf, bytes) and len(buf) == expected
    buf2, reward, goal, truncated = binding.step(0.0, 0.0)
    assert len(buf2) == expected
    assert isinstance(reward, float)
    assert goal and not truncated
    assert binding.reset(78) != buf
