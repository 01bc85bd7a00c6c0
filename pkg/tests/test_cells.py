import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from liaf import tensor as T
from liaf.cells import (CellError, CellParams, CellState, Conv, Dense, Free, NumericError, init_state,
                        integrate, run_sequence, step)
from oracles import liaf_scalar

W = np.array([[1.0], [0.5]])
X = np.array([[0.2, 0.4]])


def dense_params(**kw):
    base = dict(v_th=np.array([1.0]), v_reset=np.array([0.0]), alpha=np.array([0.5]), beta=np.array([0.1]),
                sharing="channel", integration=Dense(W))
    base.update(kw)
    return CellParams(**base)


def test_integrate_examples():
    p = CellParams(0.5, 0.0, 0.3, 0.0, sharing="all")
    x = np.random.default_rng(0).random((2, 3))
    assert integrate(p, x) is x
    assert integrate(dense_params(), X)[0, 0] == pytest.approx(0.4, abs=1e-15)
    pc = CellParams(0.5, 0.0, 0.3, 0.0, sharing="all", integration=Conv(np.zeros((3, 3, 2, 4))))
    assert not integrate(pc, np.ones((1, 5, 5, 2))).any()


def test_integrate_shape_mismatch():
    with pytest.raises(CellError):
        integrate(dense_params(), np.ones((1, 3)))


@pytest.mark.parametrize("mode, act, expected", [("spike", "identity", 1.0), ("tr", "relu", 0.1),
                                                  ("ntr", "identity", 1.1)])
def test_step_fires(mode, act, expected):
    p = dense_params(output_mode=mode, act=act)
    y, s, fired = step(p, CellState(np.array([[0.7]])), X)
    assert fired[0, 0] == 1.0
    assert s.v_m[0, 0] == pytest.approx(0.1, abs=1e-15)
    assert y[0, 0] == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("mode, act, expected", [("spike", "identity", 0.0), ("tr", "relu", 0.0)])
def test_step_below_threshold(mode, act, expected):
    y, s, fired = step(dense_params(output_mode=mode, act=act), CellState(np.array([[0.4]])), X)
    assert fired[0, 0] == 0.0
    assert s.v_m[0, 0] == pytest.approx(0.5, abs=1e-15)
    assert y[0, 0] == expected


def test_tie_at_threshold_fires():
    p = CellParams(1.0, 0.0, 0.5, 0.0, sharing="all")
    _, _, fired = step(p, CellState(np.zeros((1, 1))), np.array([[1.0]]))
    assert fired[0, 0] == 1.0


def test_perceptron_degradation_single_step():
    p = dense_params(alpha=np.array([0.0]), beta=np.array([0.0]), output_mode="ntr")
    y, s, _ = step(p, init_state(p, 1, (1,)), X)
    assert y[0, 0] == pytest.approx(0.4, abs=1e-15)
    assert s.v_m[0, 0] == 0.0


def test_init_state():
    p = CellParams(0.5, 0.0, 0.3, 0.0, sharing="all")
    assert np.array_equal(init_state(p, 2, (3,)).v_m, np.zeros((2, 3)))
    assert init_state(p, 1, (2, 2, 1)).v_m.shape == (1, 2, 2, 1)
    assert np.array_equal(init_state(p, 2, (3,)).v_m, init_state(p, 2, (3,)).v_m)
    with pytest.raises(CellError):
        init_state(p, 0, (3,))


def test_step_is_pure():
    p = dense_params(output_mode="tr", act="relu")
    s = CellState(np.array([[0.7]]))
    a, b = step(p, s, X), step(p, s, X)
    assert s.v_m[0, 0] == 0.7
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1].v_m, b[1].v_m)


def test_run_sequence_T1_equals_step():
    p = dense_params(output_mode="tr", act="relu")
    y = run_sequence(p, X[:, None, :])
    y1, _, _ = step(p, init_state(p, 1, (1,)), X)
    assert np.array_equal(y[:, 0], y1)


def test_prefix_sum_without_firing():
    p = CellParams(1e9, 0.0, 1.0, 0.0, sharing="all", output_mode="ntr")
    x = np.random.default_rng(0).random((2, 6, 3))
    np.testing.assert_allclose(run_sequence(p, x), np.cumsum(x, axis=1), rtol=1e-14)


@pytest.mark.parametrize("seed", range(10))
def test_spike_mode_matches_scalar_oracle(seed):
    rng = np.random.default_rng(seed)
    v_th, v_reset, alpha, beta = rng.uniform(0.2, 1.5), rng.uniform(-0.5, 0.3), rng.uniform(0, 1), rng.uniform(-0.1, 0.1)
    x = rng.uniform(-0.5, 1.5, size=(1, 30, 1))
    for mode, act in (("spike", None), ("tr", lambda z: max(z, 0.0)), ("ntr", lambda z: z)):
        p = CellParams(v_th, v_reset, alpha, beta, sharing="all", output_mode=mode,
                       act="relu" if mode == "tr" else "identity")
        y, tr = run_sequence(p, x, return_trace=True)
        ys, vs, fs = liaf_scalar(x[0, :, 0], v_th, v_reset, alpha, beta, mode, act)
        np.testing.assert_allclose(y[0, :, 0], ys, rtol=0, atol=1e-14)
        np.testing.assert_allclose(tr.v_m[0, :, 0], vs, rtol=0, atol=1e-14)
        assert np.array_equal(tr.fired[0, :, 0], fs)


def test_reset_sets_potential():
    rng = np.random.default_rng(1)
    p = CellParams(0.5, -0.2, 0.7, 0.05, sharing="all")
    _, tr = run_sequence(p, rng.uniform(0, 1, (4, 20, 3)), return_trace=True)
    assert np.all(tr.v_m[tr.fired == 1] == 0.7 * -0.2 + 0.05)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 31), idx=st.integers(0, 3), bump=st.floats(0, 2))
def test_monotone_fire(seed, idx, bump):
    rng = np.random.default_rng(seed)
    w = rng.uniform(0, 1, (4, 3))
    p = CellParams(np.full(3, 0.8), np.zeros(3), np.full(3, 0.5), np.zeros(3), integration=Dense(w))
    x = rng.uniform(0, 1, (1, 4))
    _, _, f0 = step(p, init_state(p, 1, (3,)), x)
    x2 = x.copy()
    x2[0, idx] += bump
    _, _, f1 = step(p, init_state(p, 1, (3,)), x2)
    assert np.all(f1 >= f0)


def test_lif_degradation_bit_identical():
    rng = np.random.default_rng(7)
    for _ in range(50):
        w = rng.standard_normal((5, 4))
        dyn = dict(v_th=rng.uniform(0, 1, 4), v_reset=rng.uniform(-0.5, 0.2, 4),
                   alpha=rng.uniform(0, 1, 4), beta=rng.uniform(-0.1, 0.1, 4))
        x = (rng.random((3, 8, 5)) < 0.5).astype(float)
        a, ta = run_sequence(CellParams(**dyn, integration=Dense(w), output_mode="spike"), x, True)
        b, tb = run_sequence(CellParams(**dyn, integration=Dense(w), output_mode="tr", act="threshold"), x, True)
        assert np.array_equal(a, b) and np.array_equal(ta.v_m, tb.v_m) and np.array_equal(ta.fired, tb.fired)


def test_conv_perceptron_degradation():
    rng = np.random.default_rng(3)
    k, b = rng.standard_normal((3, 3, 2, 4)), rng.standard_normal(4)
    p = CellParams(np.full(4, 0.5), np.zeros(4), np.zeros(4), np.zeros(4), integration=Conv(k, b, 1))
    x = rng.standard_normal((2, 3, 5, 5, 2))
    y = run_sequence(p, x)
    for t in range(3):
        np.testing.assert_allclose(y[:, t], T.conv2d(x[:, t], k, 1) + b, rtol=0, atol=1e-12)


def test_param_validation():
    with pytest.raises(CellError, match="Non-Sharing"):
        CellParams(np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2), sharing="non",
                   integration=Conv(np.zeros((3, 3, 1, 2))))
    with pytest.raises(CellError):
        CellParams(0.5, 0.0, np.inf, 0.0, sharing="all")
    with pytest.raises(CellError):
        CellParams(np.zeros(3), 0.0, 0.3, 0.0, sharing="all")
    with pytest.raises(CellError):
        CellParams(np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3), sharing="channel",
                   integration=Dense(np.zeros((2, 4))))
    with pytest.raises(CellError):
        CellParams(0.5, 0.0, 0.3, 0.0, sharing="all", output_mode="analog")


def test_free_non_sharing_needs_full_neuron_shape():
    p = CellParams(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)), np.zeros((2, 2, 3)), np.zeros((2, 2, 3)), sharing="non")
    assert run_sequence(p, np.ones((1, 2, 2, 2, 3))).shape == (1, 2, 2, 2, 3)
    with pytest.raises(CellError):
        run_sequence(p, np.ones((1, 2, 3, 3, 3)))


def test_non_finite_potential_raises_with_layer_name():
    p = CellParams(0.5, 0.0, 0.3, 0.0, sharing="all", name="conv3")
    with pytest.raises(NumericError, match="conv3"):
        run_sequence(p, np.array([[[np.nan]]]))
