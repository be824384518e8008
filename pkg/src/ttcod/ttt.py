"""TTT-Linear: a sequence layer whose hidden state is a linear model.

For every token ``u`` three views are projected: train view ``x = K u``,
label view ``v = V u`` and test view ``q = Q u``. The hidden state ``W``
takes a gradient step on ``||W x - v||^2`` and the token's output is
``W q``. Tokens are processed in mini-batches: every gradient inside a
mini-batch is taken at the mini-batch's starting ``W`` and the updates are
accumulated causally, so the output of token ``t`` only sees tokens
``<= t``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, layer_norm, layer_norm_backward, prng_fill


@dataclass
class TTTConfig:
    dim: int
    inner_lr: float = 0.005
    mini_batch: int = 16
    residual: bool = False

    def __post_init__(self):
        if self.inner_lr < 0:
            raise ValueError("inner_lr must be >= 0")
        if self.mini_batch < 1:
            raise ValueError("mini_batch must be >= 1")


@dataclass
class ViewProjections:
    theta_k: np.ndarray
    theta_v: np.ndarray
    theta_q: np.ndarray

    @classmethod
    def init(cls, dim: int, seed: int, dtype=np.float32) -> "ViewProjections":
        return cls(*(prng_fill((dim, dim), seed + i, dtype=dtype) for i in range(3)))

    @property
    def dim(self) -> int:
        return self.theta_k.shape[0]

    def views(self, seq: np.ndarray):
        """Row-form projections of a ``[T, C]`` sequence: ``(X, V, Q)``."""
        return seq @ self.theta_k.T, seq @ self.theta_v.T, seq @ self.theta_q.T


@dataclass
class TTTState:
    w: np.ndarray
    step_count: int = 0
    updates: int = 0


class NonFiniteInput(ValueError):
    pass


def inner_loss(w: np.ndarray, x: np.ndarray, v: np.ndarray) -> float:
    r = w @ x - v
    return float(r @ r)


def inner_grad(w: np.ndarray, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    return 2.0 * np.outer(w @ x - v, x)


def ttt_step(state: TTTState, x_train: np.ndarray, v_label: np.ndarray, eta: float) -> TTTState:
    """One inner gradient step on a single token; returns a new state."""
    if not (np.all(np.isfinite(x_train)) and np.all(np.isfinite(v_label))
            and np.all(np.isfinite(state.w)) and math.isfinite(eta)):
        raise NonFiniteInput("ttt_step received non-finite input")
    w = state.w - eta * inner_grad(state.w, x_train, v_label)
    return TTTState(w=w, step_count=state.step_count + 1, updates=state.updates + 1)


@dataclass
class _Group:
    start: int
    stop: int
    w_start: np.ndarray
    err: np.ndarray            # [b, C]  W_start x_s - v_s
    w_tok: np.ndarray          # [b, C, C] per-token hidden state after its own update
    y: np.ndarray              # [b, C]  W_t q_t


@dataclass
class TTTCache:
    seq: np.ndarray
    proj: ViewProjections
    cfg: TTTConfig
    x: np.ndarray
    v: np.ndarray
    q: np.ndarray
    groups: list = field(default_factory=list)
    ln: tuple | None = None


def _check(seq: np.ndarray, proj: ViewProjections, cfg: TTTConfig, w0: np.ndarray) -> None:
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise ShapeError(f"ttt_forward expects a non-empty [T, C] sequence, got {seq.shape}")
    c = seq.shape[1]
    if proj.dim != c or cfg.dim != c or w0.shape != (c, c):
        raise ShapeError(
            f"token width {c} disagrees with projections ({proj.dim}), config ({cfg.dim}) "
            f"or W0 {w0.shape}")


def ttt_forward(seq: np.ndarray, proj: ViewProjections, cfg: TTTConfig, w0: np.ndarray | None = None,
                return_cache: bool = False):
    """Run the layer over ``seq`` of shape ``[T, C]``.

    Returns ``(outputs, final_state)`` or, with ``return_cache``, also the
    cache needed by :func:`ttt_backward`.
    """
    if w0 is None:
        w0 = np.zeros((seq.shape[1], seq.shape[1]), dtype=seq.dtype)
    _check(seq, proj, cfg, w0)
    x, v, q = proj.views(seq)
    eta = cfg.inner_lr
    t_total, c = seq.shape
    out = np.empty_like(q)
    cache = TTTCache(seq=seq, proj=proj, cfg=cfg, x=x, v=v, q=q)
    w = w0
    updates = 0
    for start in range(0, t_total, cfg.mini_batch):
        stop = min(start + cfg.mini_batch, t_total)
        xb, vb, qb = x[start:stop], v[start:stop], q[start:stop]
        err = xb @ w.T - vb
        grads = 2.0 * err[:, :, None] * xb[:, None, :]
        w_tok = w - eta * np.cumsum(grads, axis=0)
        y = np.matmul(w_tok, qb[:, :, None])[:, :, 0]
        out[start:stop] = y
        if return_cache:
            cache.groups.append(_Group(start, stop, w, err, w_tok, y))
        w = w_tok[-1]
        updates += 1
    if cfg.residual:
        normed, inv = layer_norm(out)
        cache.ln = (normed, inv)
        out = q + normed
    state = TTTState(w=w, step_count=t_total, updates=updates)
    if return_cache:
        return out, state, cache
    return out, state


def ttt_backward(cache: TTTCache, grad_out: np.ndarray) -> dict:
    """Reverse pass through :func:`ttt_forward`.

    Returns gradients for ``theta_k``, ``theta_v``, ``theta_q``, ``w0`` and
    the input sequence ``seq``.
    """
    proj, eta = cache.proj, cache.cfg.inner_lr
    dq = np.zeros_like(cache.q)
    if cache.cfg.residual:
        normed, inv = cache.ln
        dq += grad_out
        dy = layer_norm_backward(normed, inv, grad_out)
    else:
        dy = grad_out
    dx = np.zeros_like(cache.x)
    dv = np.zeros_like(cache.v)
    c = cache.x.shape[1]
    dw_next = np.zeros((c, c), dtype=cache.x.dtype)
    for grp in reversed(cache.groups):
        sl = slice(grp.start, grp.stop)
        xb, qb, dyb = cache.x[sl], cache.q[sl], dy[sl]
        dq[sl] += np.matmul(np.swapaxes(grp.w_tok, 1, 2), dyb[:, :, None])[:, :, 0]
        dw_tok = dyb[:, :, None] * qb[:, None, :]
        # every token's state feeds all later states of the group and the next group
        acc = np.cumsum(dw_tok[::-1], axis=0)[::-1] + dw_next
        dgrads = -eta * acc
        derr = 2.0 * np.matmul(dgrads, xb[:, :, None])[:, :, 0]
        dx[sl] += 2.0 * np.matmul(np.swapaxes(dgrads, 1, 2), grp.err[:, :, None])[:, :, 0]
        dx[sl] += derr @ grp.w_start
        dv[sl] -= derr
        dw_next = dw_tok.sum(axis=0) + dw_next + derr.T @ xb
    seq = cache.seq
    return {
        "theta_k": dx.T @ seq,
        "theta_v": dv.T @ seq,
        "theta_q": dq.T @ seq,
        "w0": dw_next,
        "seq": dx @ proj.theta_k + dv @ proj.theta_v + dq @ proj.theta_q,
    }


def expected_updates(t: int, mini_batch: int) -> int:
    return -(-t // mini_batch)


def ttt_causality_probe(seq: np.ndarray, proj: ViewProjections, cfg: TTTConfig, w0: np.ndarray | None,
                        t_perturb: int, scale: float = 1.0, seed: int = 0) -> bool:
    """True iff perturbing token ``t_perturb`` leaves every earlier output bit-identical."""
    if not 0 <= t_perturb < seq.shape[0]:
        raise IndexError(f"t_perturb={t_perturb} outside [0, {seq.shape[0]})")
    base, _ = ttt_forward(seq, proj, cfg, w0)
    moved = seq.copy()
    noise = np.random.Generator(np.random.PCG64(seed)).standard_normal(seq.shape[1])
    moved[t_perturb] += (scale * noise).astype(seq.dtype)
    out, _ = ttt_forward(moved, proj, cfg, w0)
    return bool(np.array_equal(base[:t_perturb], out[:t_perturb]))
