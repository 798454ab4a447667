import numpy as np
import pytest

from hidec import autograd as ag
from hidec.optim import (
    ParameterStore, adam_step, clip_global_norm, finite_diff_check, global_grad_norm, linear_schedule,
)


def make_store(values):
    store = ParameterStore(np.float64)
    for name, v in values.items():
        store.add(name, np.asarray(v, dtype=float))
    return store


def test_adam_matches_reference_loop():
    rng = np.random.default_rng(3)
    x0 = rng.normal(size=5)
    store = make_store({"x": x0})
    target = rng.normal(size=5)
    m = v = np.zeros(5)
    x = x0.copy()
    for t in range(1, 21):
        store.zero_grad()
        ag.tsum((store["x"] - target) ** 2).backward()
        adam_step(store, 0.05, 0.9, 0.999, 1e-8)
        g = 2 * (x - target)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x = x - 0.05 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(store["x"].data, x, rtol=1e-12)


def test_first_adam_step_moves_by_lr():
    store = make_store({"x": [1.0, -2.0]})
    ag.tsum(store["x"] * np.array([3.0, -0.5])).backward()
    adam_step(store, 0.1)
    np.testing.assert_allclose(store["x"].data, [0.9, -1.9], atol=1e-7)


def test_clip_rescales_jointly():
    store = make_store({"a": [0.0, 0.0], "b": [0.0]})
    store["a"].grad = np.array([3.0, 0.0])
    store["b"].grad = np.array([4.0])
    assert clip_global_norm(store, 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose(store["a"].grad, [0.6, 0.0])
    np.testing.assert_allclose(store["b"].grad, [0.8])
    assert global_grad_norm(store) == pytest.approx(1.0)


def test_clip_below_threshold_is_noop():
    store = make_store({"a": [0.0]})
    store["a"].grad = np.array([0.5])
    clip_global_norm(store, 1.0)
    assert store["a"].grad[0] == 0.5


def test_schedule_shape():
    total, peak = 100, 1e-3
    assert linear_schedule(0, total, peak) == 0.0
    assert linear_schedule(10, total, peak) == pytest.approx(peak)
    assert linear_schedule(5, total, peak) == pytest.approx(peak / 2)
    assert linear_schedule(55, total, peak) == pytest.approx(peak / 2)
    assert linear_schedule(100, total, peak) == 0.0
    lrs = [linear_schedule(s, total, peak) for s in range(total)]
    assert max(lrs) == pytest.approx(peak)


def test_finite_diff_check_flags_wrong_gradient():
    store = make_store({"w": [0.3, -0.7, 1.1]})

    def good(s):
        return ag.tsum(ag.tanh(s["w"]) * s["w"])

    assert finite_diff_check(good, store).passed

    def bad(s):
        # forward uses w**2, backward sees only one factor
        w = s["w"]
        frozen = ag.Tensor(w.data.copy())
        return ag.tsum(w * frozen)

    report = finite_diff_check(bad, store)
    assert not report.passed
    assert report.worst()[0] == "w"


def test_snapshot_is_a_copy():
    store = make_store({"w": [1.0]})
    snap = store.snapshot()
    store["w"].data[0] = 5.0
    assert snap["w"][0] == 1.0
    store.load_arrays(snap)
    assert store["w"].data[0] == 1.0
