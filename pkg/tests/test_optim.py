import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from routegrad.optim import LrSchedule, SgdState, schedule_step, sgd_step


def test_single_step_with_decay():
    p = {"w.weight": np.array([1.0])}
    sgd_step(p, {"w.weight": np.array([0.5])}, SgdState(lr=0.1, momentum=0.9, weight_decay=0.0))
    assert p["w.weight"][0] == pytest.approx(0.95)


def test_bias_not_decayed():
    p = {"l.weight": np.array([1.0]), "l.bias": np.array([1.0])}
    g = {"l.weight": np.array([0.0]), "l.bias": np.array([0.0])}
    sgd_step(p, g, SgdState(lr=1.0, momentum=0.0, weight_decay=0.5))
    assert p["l.weight"][0] == pytest.approx(0.5)
    assert p["l.bias"][0] == 1.0


def test_velocity_decays_geometrically():
    st_ = SgdState(lr=0.1, momentum=0.9, weight_decay=0.0)
    p = {"w.weight": np.array([0.0])}
    sgd_step(p, {"w.weight": np.array([1.0])}, st_)
    zero = {"w.weight": np.array([0.0])}
    for k in range(1, 6):
        sgd_step(p, zero, st_)
        assert st_.velocity["w.weight"][0] == pytest.approx(0.9 ** k)


def test_two_steps_constant_gradient():
    lr, g = 0.01, 2.0
    p = {"w.weight": np.array([0.0])}
    state = SgdState(lr=lr, momentum=0.9, weight_decay=0.0)
    for _ in range(2):
        sgd_step(p, {"w.weight": np.array([g])}, state)
    assert p["w.weight"][0] == pytest.approx(-lr * g * (1 + 1.9))


def test_key_and_shape_checks():
    p = {"a.weight": np.zeros(2)}
    with pytest.raises(KeyError):
        sgd_step(p, {"b.weight": np.zeros(2)}, SgdState())
    with pytest.raises(ValueError):
        sgd_step(p, {"a.weight": np.zeros(3)}, SgdState())
    with pytest.raises(ValueError):
        SgdState(lr=0.0)


def test_quadratic_trajectory_closed_form():
    # f(p) = 0.5 * a * p^2 ; heavy-ball recursion solved by its 2x2 transition matrix
    a, lr, m, p0 = 3.0, 0.05, 0.9, 1.0
    p = {"q.weight": np.array([p0])}
    state = SgdState(lr=lr, momentum=m, weight_decay=0.0)
    trans = np.array([[m, a], [-lr * m, 1 - lr * a]])  # (v, p) -> (v', p')
    vec = np.array([0.0, p0])
    for _ in range(50):
        sgd_step(p, {"q.weight": a * p["q.weight"]}, state)
        vec = trans @ vec
        assert abs(p["q.weight"][0] - vec[1]) <= 1e-10
        assert abs(state.velocity["q.weight"][0] - vec[0]) <= 1e-10


def test_plateau_flat_errors_drop_once():
    sched, state = LrSchedule(), SgdState(lr=0.01)
    drops = [schedule_step(sched, 0.3, state) for _ in range(4)]
    assert drops == [False, False, False, True]
    assert state.lr == pytest.approx(0.001)


def test_plateau_improving_stream_never_drops():
    sched, state = LrSchedule(), SgdState(lr=0.01)
    for k in range(30):
        assert not schedule_step(sched, 0.5 - 0.01 * k, state)
    assert state.lr == 0.01


def test_plateau_waits_patience_after_drop():
    sched, state = LrSchedule(), SgdState(lr=0.01)
    results = [schedule_step(sched, 0.2, state) for _ in range(7)]
    assert results == [False, False, False, True, False, False, True]
    assert state.lr == pytest.approx(0.0001)


def test_fixed_steps_schedule():
    sched, state = LrSchedule(kind="fixed_steps", milestones=[10, 20]), SgdState(lr=0.1)
    dropped = [it for it in range(30) if schedule_step(sched, None, state, iteration=it)]
    assert dropped == [10, 20]
    assert state.lr == pytest.approx(0.001)


def test_schedule_rejects_bad_input():
    with pytest.raises(ValueError):
        LrSchedule(kind="cosine")
    with pytest.raises(ValueError):
        schedule_step(LrSchedule(), float("nan"), SgdState())


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=40))
def test_lr_is_monotone_and_discrete(errors):
    sched, state = LrSchedule(), SgdState(lr=0.01)
    prev = state.lr
    for e in errors:
        schedule_step(sched, e, state)
        assert state.lr <= prev
        assert np.log10(0.01 / state.lr) == pytest.approx(round(np.log10(0.01 / state.lr)))
        prev = state.lr
