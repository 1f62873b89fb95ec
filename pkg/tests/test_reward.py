"""Reward term tests against hand arithmetic and the naive TV oracle."""
from __future__ import annotations

import math

import numpy as np
import pytest

from covpath.reward import (
    RewardConfig,
    Termination,
    area_reward,
    check_termination,
    step_reward,
    total_variation,
    tv_global,
    tv_incremental,
)

from oracles import naive_total_variation


def test_area_reward_arithmetic():
    assert area_reward(0.0, 0.15, 0.26, 0.5) == 0.0
    # Denominator 2*0.15*0.26*0.5 = 0.039: a full-speed sweep scores 1.
    assert area_reward(0.039, 0.15, 0.26, 0.5) == pytest.approx(1.0, abs=1e-12)
    assert area_reward(0.0195, 0.15, 0.26, 0.5) == pytest.approx(0.5, abs=1e-12)
    assert area_reward(0.039, 0.15, 0.26, 0.5, lambda_area=2.0) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        area_reward(-0.001, 0.15, 0.26, 0.5)


def test_total_variation_constant_fields():
    assert total_variation(np.zeros((8, 8))) == 0.0
    assert total_variation(np.ones((8, 8))) == 0.0
    assert total_variation(np.full((3, 9), 0.7)) == 0.0


def test_total_variation_single_center_cell():
    g = np.zeros((3, 3))
    g[1, 1] = 1.0
    assert total_variation(g) == pytest.approx(2.0 + math.sqrt(2.0), abs=1e-12)


def test_total_variation_degenerate_shapes():
    assert total_variation(np.ones((1, 5))) == 0.0
    assert total_variation(np.ones((5, 1))) == 0.0
    with pytest.raises(ValueError):
        total_variation(np.ones(4))


def test_total_variation_matches_naive_oracle():
    rng = np.random.default_rng(21)
    for _ in range(50):
        h, w = rng.integers(2, 40, size=2)
        g = (rng.random((h, w)) < 0.5).astype(float)
        assert total_variation(g) == pytest.approx(naive_total_variation(g), abs=1e-9)
    # Non-binary fields too.
    g = rng.random((17, 23))
    assert total_variation(g) == pytest.approx(naive_total_variation(g), abs=1e-9)


def _raster_disc(radius_m: float, res: float) -> np.ndarray:
    n = int(2 * radius_m / res) + 5
    c = n / 2.0
    rr, cc = np.mgrid[0:n, 0:n]
    return (((rr + 0.5 - c) ** 2 + (cc + 0.5 - c) ** 2) <= (radius_m / res) ** 2).astype(float)


def _raster_square(side_cells: int) -> np.ndarray:
    g = np.zeros((side_cells + 4, side_cells + 4))
    g[2 : 2 + side_cells, 2 : 2 + side_cells] = 1.0
    return g


def test_tv_global_zero_cases():
    assert tv_global(123.4, 5.0, lambda_g=0.0) == 0.0
    # Below one covered cell the scaling is undefined; clamp to zero.
    assert tv_global(1.0, 0.0, lambda_g=1.0) == 0.0
    assert tv_global(1.0, 0.5 * 0.0375**2, lambda_g=1.0) == 0.0
    assert tv_global(1.0, 4.0, lambda_g=1.0) == pytest.approx(-0.5)


def test_tv_global_shape_ratios():
    # Forward-difference TV measures axis-aligned boundaries exactly but
    # overcounts staircase (rasterized curved/diagonal) boundaries by a
    # resolution-independent factor of about 1.16. So V/sqrt(A) lands near
    # 4.0 for a square and near 1.16*2*sqrt(pi) ~ 4.13 for a disc; the
    # continuum ordering (disc strictly smaller) does not survive
    # rasterization. Pin the actual ratios instead.
    res = 0.0375
    disc = _raster_disc(1.0, res)
    area_d = disc.sum() * res * res
    v_disc = total_variation(disc) * res
    assert v_disc / math.sqrt(area_d) == pytest.approx(4.13, abs=0.08)

    side = int(round(math.sqrt(disc.sum())))
    square = _raster_square(side)
    area_s = square.sum() * res * res
    v_square = total_variation(square) * res
    assert v_square / math.sqrt(area_s) == pytest.approx(4.0, abs=0.03)


def test_tv_global_scale_invariant_for_squares():
    res = 0.0375
    vals = []
    for side in (40, 80):
        sq = _raster_square(side)
        v = total_variation(sq) * res
        a = sq.sum() * res * res
        vals.append(tv_global(v, a, lambda_g=1.0, resolution=res))
    assert vals[0] == pytest.approx(vals[1], rel=0.02)


def test_tv_incremental_arithmetic():
    assert tv_incremental(3.2, 3.2, 0.26, 0.5, lambda_i=0.2) == 0.0
    # The stated per-step maximum increase yields exactly -lambda.
    dv = 2 * 0.26 * 0.5
    assert tv_incremental(5.0 + dv, 5.0, 0.26, 0.5, lambda_i=0.2) == pytest.approx(-0.2)
    assert tv_incremental(5.0 - dv, 5.0, 0.26, 0.5, lambda_i=0.2) == pytest.approx(0.2)


def test_tv_incremental_rewards_hole_filling():
    res = 0.0375
    filled = np.ones((9, 9))
    holed = filled.copy()
    holed[4, 4] = 0.0
    v_before = total_variation(holed) * res
    v_after = total_variation(filled) * res
    assert tv_incremental(v_after, v_before, 0.26, 0.5, lambda_i=1.0) > 0.0


def test_step_reward_assembly():
    cfg = RewardConfig(lambda_tv_incremental=1.0)
    kw = dict(agent_radius=0.15, v_max=0.26, dt=0.5, cfg=cfg)
    idle = step_reward(0.0, 2.0, 2.0, 1.0, False, **kw)
    assert idle.total == pytest.approx(-0.1)
    crash = step_reward(0.0, 2.0, 2.0, 1.0, True, **kw)
    assert crash.r_coll == -10.0
    assert crash.total == pytest.approx(-10.1)
    best = step_reward(0.039, 2.0, 2.0, 1.0, False, **kw)
    assert best.total == pytest.approx(1.0 - 0.1)
    parts = (best.r_area, best.r_tv_g, best.r_tv_i, best.r_coll, best.r_const)
    assert best.total == pytest.approx(sum(parts), abs=1e-15)


def test_check_termination():
    cfg = RewardConfig(goal_coverage=0.99, truncation_steps=1000)
    assert check_termination(0.99, cfg, 0) is Termination.GOAL_REACHED
    assert check_termination(0.5, cfg, 1000) is Termination.TRUNCATED
    assert check_termination(0.5, cfg, 999) is Termination.CONTINUE
    # Reaching the goal wins over simultaneous staleness.
    assert check_termination(0.995, cfg, 1000) is Termination.GOAL_REACHED
