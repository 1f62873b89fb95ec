"""Ring-buffer behavior, n-step aggregation and thread safety."""

import threading

import numpy as np
import pytest

from covpath_trainer import NStepQueue, ReplayBuffer


def _add_indexed(buf, k, obs_dim):
    obs = np.full(obs_dim, k, dtype=np.float32)
    buf.add(obs, (0.5, -0.5), float(k), obs + 1, k % 7 == 0)


def test_ring_overwrites_oldest():
    buf = ReplayBuffer(capacity=8, obs_dim=3, seed=0)
    for k in range(20):
        _add_indexed(buf, k, 3)
    assert len(buf) == 8
    assert buf.total_added == 20
    kept = sorted(buf.obs[:, 0].astype(int))
    assert kept == list(range(12, 20))


def test_sample_shapes_and_alignment():
    buf = ReplayBuffer(capacity=64, obs_dim=3, seed=1)
    for k in range(40):
        _add_indexed(buf, k, 3)
    batch = buf.sample(16)
    assert batch["obs"].shape == (16, 3)
    assert batch["actions"].shape == (16, 2)
    assert batch["rewards"].shape == (16,)
    assert batch["obs"].dtype == np.float32
    # transition fields stay aligned: reward k pairs with obs k and next k+1
    assert np.array_equal(batch["rewards"], batch["obs"][:, 0])
    assert np.array_equal(batch["next_obs"][:, 0], batch["obs"][:, 0] + 1)


def test_sample_empty_raises():
    with pytest.raises(ValueError):
        ReplayBuffer(capacity=4, obs_dim=2).sample(1)


def test_horizon_and_flag_round_trip():
    buf = ReplayBuffer(capacity=8, obs_dim=2, seed=0)
    buf.add(np.zeros(2), (0, 0), 1.0, np.ones(2), False, horizon=3, flag=1.0)
    buf.add(np.zeros(2), (0, 0), 1.0, np.ones(2), False)
    batch = buf.sample(64)
    flagged = batch["flags"] == 1.0
    assert set(batch["horizons"][flagged]) == {3.0}
    assert set(batch["horizons"][~flagged]) == {1.0}


def test_half_precision_storage_samples_float32():
    buf = ReplayBuffer(capacity=4, obs_dim=3, seed=0, obs_dtype=np.float16)
    buf.add(np.full(3, 0.125), (0, 0), 1.0, np.full(3, 0.25), False)
    batch = buf.sample(4)
    assert buf.obs.dtype == np.float16
    assert batch["obs"].dtype == np.float32
    assert np.all(batch["obs"] == 0.125)
    assert np.all(batch["next_obs"] == 0.25)


def test_nstep_queue_full_window_and_terminal_drain():
    q = NStepQueue(n=2, gamma=0.5)
    s = [np.full(1, k, dtype=np.float32) for k in range(4)]
    assert q.push(s[0], (0.1, 0.0), 1.0, s[1], False, flag=1.0) == []
    out = q.push(s[1], (0.2, 0.0), 2.0, s[2], False)
    # window full: oldest start aggregates r0 + gamma*r1 and bootstraps at s2
    assert len(out) == 1
    obs, action, ret, next_obs, done, horizon, flag = out[0]
    assert obs[0] == 0 and next_obs[0] == 2
    assert ret == 1.0 + 0.5 * 2.0
    assert not done and horizon == 2
    # the aggregate carries its start transition's flag
    assert flag == 1.0
    # terminal: every pending start drains with its remaining window
    out = q.push(s[2], (0.3, 0.0), 4.0, s[3], True)
    assert [(t[2], t[4], t[5], t[6]) for t in out] == [
        (2.0 + 0.5 * 4.0, True, 2, 0.0),
        (4.0, True, 1, 0.0),
    ]
    assert all(t[3][0] == 3 for t in out)
    assert q.flush() == []


def test_nstep_queue_truncation_flush_keeps_bootstrap():
    q = NStepQueue(n=5, gamma=1.0)
    s = [np.full(1, k, dtype=np.float32) for k in range(3)]
    q.push(s[0], (0, 0), 1.0, s[1], False)
    q.push(s[1], (0, 0), 1.0, s[2], False)
    out = q.flush()
    # truncation is not a terminal: done stays false, horizons shrink
    assert [(t[2], t[4], t[5]) for t in out] == [(2.0, False, 2), (1.0, False, 1)]


def test_concurrent_adds_and_samples_lose_nothing():
    buf = ReplayBuffer(capacity=1000, obs_dim=2, seed=2)
    n_threads, per_thread = 4, 2000

    def writer(tid):
        for k in range(per_thread):
            _add_indexed(buf, tid * per_thread + k, 2)

    def reader():
        for _ in range(500):
            if len(buf):
                buf.sample(32)

    threads = [threading.Thread(target=writer, args=(t,)) for t in range(n_threads)]
    threads += [threading.Thread(target=reader) for _ in range(2)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert buf.total_added == n_threads * per_thread
    assert len(buf) == 1000
