import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decoupler.optimize import AdamConfig, AdamState, TrainingError, TrainingTrace, adam_step, train_phase


def test_adam_config_validation():
    cfg = AdamConfig()
    assert (cfg.alpha, cfg.beta1, cfg.beta2) == (0.01, 0.8, 0.9)
    for bad in ({"alpha": 0}, {"beta1": 1.0}, {"beta2": 0.0}, {"epsilon": -1}, {"max_iters": 0}):
        with pytest.raises(ValueError):
            AdamConfig(**bad)


def test_zero_gradient_step():
    st0 = AdamState.zeros(3)
    p = np.array([0.1, -0.2, 0.3])
    new, st1 = adam_step(st0, p, np.zeros(3), AdamConfig())
    assert np.array_equal(new, p) and st1.step_count == 1


def test_first_step(oracles):
    new, _ = adam_step(AdamState.zeros(1), np.zeros(1), np.ones(1), AdamConfig())
    assert new[0] == pytest.approx(oracles["adam_first_step_delta"], abs=1e-15)
    assert new[0] == pytest.approx(-0.01 / (1 + 1e-8), abs=1e-15)


def test_quadratic_convergence(oracles):
    cfg = AdamConfig()
    theta, state = np.ones(1), AdamState.zeros(1)
    for step in range(1, 2001):
        theta, state = adam_step(state, theta, 2 * theta, cfg)
        if abs(theta[0]) < 1e-3:
            break
    assert abs(theta[0]) < 1e-3
    assert step == oracles["adam_quadratic_steps_to_1e-3"]["steps"]


def test_length_mismatch():
    with pytest.raises(ValueError):
        adam_step(AdamState.zeros(2), np.zeros(3), np.zeros(3), AdamConfig())


def test_threshold_at_entry():
    trace = TrainingTrace()
    p, reason = train_phase(lambda p: 0.0, lambda p: np.zeros_like(p), np.ones(2), AdamConfig(), trace, "a")
    assert reason == "threshold" and len(trace) == 1


def test_max_iters_rows():
    trace = TrainingTrace()
    cfg = AdamConfig(max_iters=5, cost_threshold=-1)
    _, reason = train_phase(lambda p: float(np.sum(p**2)) + 1, lambda p: 2 * p, np.ones(2), cfg, trace, "a")
    assert reason == "max_iters" and len(trace) == 5
    assert list(trace.column("iteration")) == [0, 1, 2, 3, 4]


def test_patience_stop():
    trace = TrainingTrace()
    cfg = AdamConfig(patience=10, cost_threshold=-1)
    _, reason = train_phase(lambda p: 1.0, lambda p: np.zeros_like(p), np.ones(1), cfg, trace, "flat")
    assert reason == "patience" and len(trace) == 11


def test_trainable_subset_and_phases():
    trace = TrainingTrace()
    cfg = AdamConfig(max_iters=20, cost_threshold=-1)
    p0 = np.array([1.0, 2.0, 3.0])
    p, _ = train_phase(lambda p: float(np.sum(p**2)), lambda p: 2 * p, p0, cfg, trace, "one", trainable=[1])
    assert p[0] == 1.0 and p[2] == 3.0 and p[1] != 2.0
    train_phase(lambda p: float(np.sum(p**2)), lambda p: 2 * p, p, cfg, trace, "two")
    assert trace.phases() == ["one", "two"]
    assert np.all(np.diff(trace.column("iteration")) == 1)


def test_errors_carry_iteration():
    calls = {"n": 0}

    def value(p):
        calls["n"] += 1
        return np.nan if calls["n"] == 3 else 1.0 + calls["n"]

    with pytest.raises(TrainingError, match="iteration 2"):
        train_phase(value, lambda p: np.ones_like(p), np.zeros(1), AdamConfig(cost_threshold=-1), TrainingTrace())

    def boom(p):
        raise RuntimeError("bad")

    with pytest.raises(TrainingError, match="iteration 0"):
        train_phase(boom, lambda p: p, np.zeros(1), AdamConfig(), TrainingTrace())


def test_csv_roundtrip(tmp_path):
    trace = TrainingTrace()
    trace.append("decouple", 0.5, 0.3, 0.9, 1.25)
    trace.append("local", 1 / 3, 0.99, 0.01, 2.5)
    text = trace.to_csv(tmp_path / "t.csv")
    assert text.splitlines()[0] == "iteration,phase,objective,fidelity,hst_cost,wall_time_ms"
    back = TrainingTrace.from_csv(tmp_path / "t.csv")
    assert back.rows[1].objective == 1 / 3
    with pytest.raises(ValueError):
        TrainingTrace.parse_csv("a,b\n1,2\n")


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_zero_gradient_invariance(iters, size, seed):
    p0 = np.random.default_rng(seed).uniform(-3, 3, size)
    cfg = AdamConfig(max_iters=iters, cost_threshold=-1, patience=10**6)
    trace = TrainingTrace()
    p, _ = train_phase(lambda p: 1.0, lambda p: np.zeros_like(p), p0, cfg, trace)
    assert np.array_equal(p, p0) and len(trace) == iters


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=5), st.integers(0, 2**32 - 1))
def test_adam_is_deterministic(values, seed):
    g = np.random.default_rng(seed).normal(size=len(values))
    p = np.array(values)
    st0 = AdamState(np.full(len(values), 0.1), np.full(len(values), 0.2), 3)
    a, sa = adam_step(st0, p, g, AdamConfig())
    b, sb = adam_step(st0, p, g, AdamConfig())
    assert np.array_equal(a, b) and np.array_equal(sa.second_moment, sb.second_moment)
