import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttcod.tensor import ShapeError
from ttcod.ttt import (NonFiniteInput, TTTConfig, TTTState, ViewProjections, expected_updates,
                       inner_grad, inner_loss, ttt_backward, ttt_causality_probe, ttt_forward,
                       ttt_step)


def _setup(t, c, seed, dtype=np.float64, scale=1.0):
    g = np.random.default_rng(seed)
    seq = (g.normal(size=(t, c)) * scale).astype(dtype)
    proj = ViewProjections.init(c, seed, dtype)
    w0 = (0.1 * g.normal(size=(c, c))).astype(dtype)
    return seq, proj, w0


def test_config_validation():
    with pytest.raises(ValueError):
        TTTConfig(4, inner_lr=-0.1)
    with pytest.raises(ValueError):
        TTTConfig(4, mini_batch=0)


def test_step_eta_zero_is_bitwise_noop(rng):
    w = rng.normal(size=(5, 5))
    s = ttt_step(TTTState(w.copy()), rng.normal(size=5), rng.normal(size=5), 0.0)
    assert np.array_equal(s.w, w) and s.step_count == 1


def test_step_one_dimensional_hand_value():
    s = ttt_step(TTTState(np.zeros((1, 1))), np.array([1.0]), np.array([2.0]), 0.25)
    assert inner_grad(np.zeros((1, 1)), np.array([1.0]), np.array([2.0]))[0, 0] == -4
    assert s.w[0, 0] == 1.0


def test_step_rejects_non_finite():
    with pytest.raises(NonFiniteInput):
        ttt_step(TTTState(np.zeros((2, 2))), np.array([np.nan, 0]), np.zeros(2), 0.1)


def test_inner_gradient_16_dim_finite_differences(rng):
    w, x, v = rng.normal(size=(16, 16)), rng.normal(size=16), rng.normal(size=16)
    num = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        wp, wm = w.copy(), w.copy()
        wp[idx] += 1e-6
        wm[idx] -= 1e-6
        num[idx] = (inner_loss(wp, x, v) - inner_loss(wm, x, v)) / 2e-6
    g = inner_grad(w, x, v)
    assert np.linalg.norm(g - num) / np.linalg.norm(num) < 1e-5


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 8))
def test_descent_for_admissible_eta(seed, c):
    g = np.random.default_rng(seed)
    w, x, v = g.normal(size=(c, c)), g.normal(size=c), g.normal(size=c)
    eta = g.uniform(0, 1) / (2 * x @ x)
    s = ttt_step(TTTState(w), x, v, eta)
    assert inner_loss(s.w, x, v) <= inner_loss(w, x, v)


def test_forward_eta_zero_is_static_map_bitwise():
    for dtype in (np.float32, np.float64):
        seq, proj, w0 = _setup(23, 8, 1, dtype)
        out, state = ttt_forward(seq, proj, TTTConfig(8, 0.0, 4), w0)
        q = proj.views(seq)[2]
        assert np.array_equal(out, np.stack([w0 @ qt for qt in q]))
        assert np.array_equal(state.w, w0)


def test_forward_single_token_composes_step_and_matmul():
    seq, proj, w0 = _setup(1, 6, 2)
    cfg = TTTConfig(6, 0.05, 4)
    out, state = ttt_forward(seq, proj, cfg, w0)
    x, v, q = (m[0] for m in proj.views(seq))
    stepped = ttt_step(TTTState(w0), x, v, cfg.inner_lr)
    assert np.allclose(out[0], stepped.w @ q, rtol=1e-13, atol=1e-14)
    assert np.allclose(state.w, stepped.w, rtol=1e-13, atol=1e-14)
    assert state.step_count == 1 and state.updates == 1


def test_mini_batch_one_equals_sequential_unroll():
    seq, proj, w0 = _setup(8, 5, 3)
    cfg = TTTConfig(5, 0.03, 1)
    out, _ = ttt_forward(seq, proj, cfg, w0)
    x, v, q = proj.views(seq)
    state = TTTState(w0)
    ref = []
    for t in range(8):
        state = ttt_step(state, x[t], v[t], cfg.inner_lr)
        ref.append(state.w @ q[t])
    assert np.allclose(out, np.stack(ref), rtol=1e-12, atol=1e-13)
    full, _ = ttt_forward(seq, proj, TTTConfig(5, 0.03, 8), w0)
    assert not np.allclose(out, full)
    # with eta = 0 grouping is irrelevant
    a, _ = ttt_forward(seq, proj, TTTConfig(5, 0.0, 1), w0)
    b, _ = ttt_forward(seq, proj, TTTConfig(5, 0.0, 8), w0)
    assert np.array_equal(a, b)


def test_mini_batch_gradients_taken_at_group_start():
    seq, proj, w0 = _setup(4, 3, 4)
    cfg = TTTConfig(3, 0.05, 4)
    out, state = ttt_forward(seq, proj, cfg, w0)
    x, v, q = proj.views(seq)
    grads = [inner_grad(w0, x[t], v[t]) for t in range(4)]
    for t in range(4):
        w_t = w0 - cfg.inner_lr * sum(grads[:t + 1])
        assert np.allclose(out[t], w_t @ q[t], rtol=1e-12, atol=1e-13)
    assert np.allclose(state.w, w0 - cfg.inner_lr * sum(grads), rtol=1e-12)


@pytest.mark.parametrize("t,b", [(1, 1), (7, 1), (16, 16), (17, 16), (33, 4), (100, 7)])
def test_update_count_is_ceil(t, b):
    seq, proj, w0 = _setup(t, 3, 5)
    _, state = ttt_forward(seq, proj, TTTConfig(3, 0.01, b), w0)
    assert state.updates == expected_updates(t, b) == -(-t // b)
    assert state.step_count == t


def test_residual_head_changes_output():
    seq, proj, w0 = _setup(6, 4, 6)
    plain, _ = ttt_forward(seq, proj, TTTConfig(4, 0.01, 2), w0)
    res, _ = ttt_forward(seq, proj, TTTConfig(4, 0.01, 2, residual=True), w0)
    q = proj.views(seq)[2]
    y = plain
    ln = (y - y.mean(-1, keepdims=True)) / np.sqrt(y.var(-1, keepdims=True) + 1e-5)
    assert np.allclose(res, q + ln, atol=1e-12)


def test_forward_shape_errors():
    seq, proj, w0 = _setup(4, 3, 7)
    with pytest.raises(ShapeError):
        ttt_forward(seq[:, :2], proj, TTTConfig(3), w0)
    with pytest.raises(ShapeError):
        ttt_forward(seq, proj, TTTConfig(3), np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        ttt_forward(seq[:0], proj, TTTConfig(3), w0)


def test_causality_probe_examples():
    seq, proj, w0 = _setup(12, 4, 8)
    cfg = TTTConfig(4, 0.05, 4)
    assert ttt_causality_probe(seq, proj, cfg, w0, 11)
    assert ttt_causality_probe(seq, proj, cfg, w0, 0)
    # companion: perturbing token 0 moves some later output
    moved = seq.copy()
    moved[0] += 1.0
    a, _ = ttt_forward(seq, proj, cfg, w0)
    b, _ = ttt_forward(moved, proj, cfg, w0)
    assert not np.array_equal(a[1:], b[1:])
    with pytest.raises(IndexError):
        ttt_causality_probe(seq, proj, cfg, w0, 12)


def test_eta_zero_perturbation_is_local():
    seq, proj, w0 = _setup(10, 4, 9)
    cfg = TTTConfig(4, 0.0, 3)
    moved = seq.copy()
    moved[5] += 1.0
    a, _ = ttt_forward(seq, proj, cfg, w0)
    b, _ = ttt_forward(moved, proj, cfg, w0)
    changed = [t for t in range(10) if not np.array_equal(a[t], b[t])]
    assert changed == [5]


@pytest.mark.parametrize("residual", [False, True])
def test_backward_finite_differences(residual):
    seq, proj, w0 = _setup(11, 4, 10)
    cfg = TTTConfig(4, 0.05, 3, residual)
    g = np.random.default_rng(1).normal(size=(11, 4))
    _, _, cache = ttt_forward(seq, proj, cfg, w0, return_cache=True)
    grads = ttt_backward(cache, g)

    def f():
        return float((ttt_forward(seq, proj, cfg, w0)[0] * g).sum())

    for name, arr in (("theta_k", proj.theta_k), ("theta_v", proj.theta_v), ("theta_q", proj.theta_q),
                      ("w0", w0), ("seq", seq)):
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + 1e-6
            up = f()
            arr[idx] = old - 1e-6
            down = f()
            arr[idx] = old
            num[idx] = (up - down) / 2e-6
        assert np.linalg.norm(grads[name] - num) <= 1e-6 * max(1.0, np.linalg.norm(num)), name
