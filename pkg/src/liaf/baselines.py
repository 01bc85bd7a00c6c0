"""Reference recurrent cells: Elman RNN, LSTM / ConvLSTM and GRU.

The Elman cell keeps only the state update ``c_t = act(W x + U c + b)``;
an output projection, where a topology needs one, is a separate dense
layer. Gate pre-activations are ``W x + U h + b`` computed as two products
and two additions, which is the accounting the cost model assumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .cells import apply_act


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class RnnParams:
    w_c: object
    u_c: object
    b_c: object
    act_c: str = "tanh"


LSTM_GATES = ("f", "i", "o", "c")


@dataclass(frozen=True)
class LstmParams:
    """Per-gate weights keyed by gate letter ``f``, ``i``, ``o``, ``c``.

    Dense mode: ``W[g]`` is ``(K, L)``, ``U[g]`` is ``(L, L)``.
    Conv mode: ``W[g]`` is ``(I, J, K, L)``, ``U[g]`` is ``(I, J, L, L)``.
    """

    W: dict
    U: dict
    b: dict
    mode: str = "dense"
    padding: int = 1
    act_g: str = "sigmoid"
    act_c: str = "tanh"
    act_h: str = "tanh"


GRU_GATES = ("z", "r", "h")


@dataclass(frozen=True)
class GruParams:
    W: dict
    U: dict
    b: dict
    act_g: str = "sigmoid"
    act_h: str = "tanh"


def _dense_pre(w, u, b, x, h):
    xv, wv = ad.value(x), ad.value(w)
    if xv.shape[-1] != wv.shape[0] or ad.value(h).shape[-1] != ad.value(u).shape[0]:
        raise ShapeError(f"input {xv.shape} / state {ad.value(h).shape} do not match "
                         f"weights {wv.shape} / {ad.value(u).shape}")
    return ad.add(ad.add(ad.matmul(x, w), ad.matmul(h, u)), b)


def rnn_step(p: RnnParams, c_prev, x):
    return apply_act(p.act_c, _dense_pre(p.w_c, p.u_c, p.b_c, x, c_prev))


def _lstm_pre(p: LstmParams, g, x, h):
    if p.mode == "dense":
        return _dense_pre(p.W[g], p.U[g], p.b[g], x, h)
    xv, wv = ad.value(x), ad.value(p.W[g])
    if xv.ndim != 4 or xv.shape[3] != wv.shape[2]:
        raise ShapeError(f"ConvLSTM input {xv.shape} does not match kernel {wv.shape}")
    return ad.add(ad.add(ad.conv2d(x, p.W[g], p.padding), ad.conv2d(h, p.U[g], p.padding)), p.b[g])


def _lstm_update(p: LstmParams, pre, c_prev):
    f = apply_act(p.act_g, pre["f"])
    i = apply_act(p.act_g, pre["i"])
    o = apply_act(p.act_g, pre["o"])
    c_tilde = apply_act(p.act_c, pre["c"])
    c = ad.add(ad.mul(f, c_prev), ad.mul(i, c_tilde))
    h = ad.mul(o, apply_act(p.act_h, c))
    return h, c


def lstm_step(p: LstmParams, state, x):
    """One LSTM step; ``state`` is ``(c_prev, h_prev)``. Returns ``(h, (c, h))``."""
    c_prev, h_prev = state
    pre = {g: _lstm_pre(p, g, x, h_prev) for g in LSTM_GATES}
    h, c = _lstm_update(p, pre, c_prev)
    return h, (c, h)


def gru_step(p: GruParams, h_prev, x):
    z = apply_act(p.act_g, _dense_pre(p.W["z"], p.U["z"], p.b["z"], x, h_prev))
    r = apply_act(p.act_g, _dense_pre(p.W["r"], p.U["r"], p.b["r"], x, h_prev))
    h_tilde = apply_act(p.act_h, _dense_pre(p.W["h"], p.U["h"], p.b["h"], x, ad.mul(r, h_prev)))
    return ad.add(ad.mul(ad.one_minus(z), h_prev), ad.mul(z, h_tilde))


def _state_shape(p, xv):
    if isinstance(p, RnnParams):
        return (xv.shape[0], ad.value(p.w_c).shape[1])
    if isinstance(p, GruParams):
        return (xv.shape[0], ad.value(p.W["z"]).shape[1])
    L = ad.value(p.W["f"]).shape[-1]
    if p.mode == "dense":
        return (xv.shape[0], L)
    return (xv.shape[0], xv.shape[2], xv.shape[3], L)


def run_sequence_baseline(p, x_seq):
    """Unroll a baseline cell over ``(B, T, ...)`` from zero initial state."""
    xv = ad.value(x_seq)
    if xv.ndim < 3:
        raise ShapeError(f"expected (B, T, ...) input, got {xv.shape}")
    Tn = xv.shape[1]
    zeros = np.zeros(_state_shape(p, xv))
    ys = []
    if isinstance(p, RnnParams):
        c = zeros
        for t in range(Tn):
            c = rnn_step(p, c, ad.take_time(x_seq, t))
            ys.append(c)
    elif isinstance(p, GruParams):
        h = zeros
        for t in range(Tn):
            h = gru_step(p, h, ad.take_time(x_seq, t))
            ys.append(h)
    elif isinstance(p, LstmParams):
        state = (zeros, zeros)
        for t in range(Tn):
            h, state = lstm_step(p, state, ad.take_time(x_seq, t))
            ys.append(h)
    else:
        raise TypeError(f"unsupported cell parameters {type(p).__name__}")
    return ad.stack_time(ys)
