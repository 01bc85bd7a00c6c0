"""Leaky integrate-and-analog-fire cells.

One time step does::

    I = integrate(x)                  # dense, conv or integration-free
    U = I + V_prev
    F = U >= v_th
    R = F * v_reset + (1 - F) * U
    V = alpha * R + beta
    y = F                 (spike / LIF)
        act(U - v_th)     (analog, threshold-related)
        act(U)            (analog, non-threshold-related)

All arithmetic goes through :mod:`liaf.autodiff`, so the same code gives
plain numerics, BPTT gradients (with the rectangular surrogate on ``F``)
and instrumented op counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

SHARING_MODES = ("all", "channel", "non")
OUTPUT_MODES = ("spike", "tr", "ntr")
ACTIVATIONS = ("identity", "relu", "selu", "threshold", "tanh", "sigmoid")


class CellError(ValueError):
    pass


class NumericError(ArithmeticError):
    """Non-finite membrane potential; carries the layer name."""

    def __init__(self, layer, msg="non-finite membrane potential"):
        super().__init__(f"{msg} in layer {layer!r}")
        self.layer = layer


@dataclass(frozen=True)
class Dense:
    w: object
    bias: object = None


@dataclass(frozen=True)
class Conv:
    kernel: object
    bias: object = None
    padding: int = 1


@dataclass(frozen=True)
class Free:
    pass


def apply_act(name: str, x, mu: float = 0.5):
    if name == "identity":
        return x
    if name == "relu":
        return ad.relu(x)
    if name == "selu":
        return ad.selu(x)
    if name == "tanh":
        return ad.tanh(x)
    if name == "sigmoid":
        return ad.sigmoid(x)
    if name == "threshold":
        # Heaviside at 0, sharing the firing surrogate so TR mode reproduces F.
        return ad.spike(x, mu)
    raise CellError(f"unknown activation {name!r}")


def _n_channels(integration):
    if isinstance(integration, Dense):
        return ad.value(integration.w).shape[1]
    if isinstance(integration, Conv):
        return ad.value(integration.kernel).shape[3]
    return None


@dataclass(frozen=True)
class CellParams:
    v_th: object
    v_reset: object
    alpha: object
    beta: object
    sharing: str = "channel"
    integration: object = field(default_factory=Free)
    output_mode: str = "ntr"
    act: str = "identity"
    mu: float = 0.5
    name: str = "cell"

    def __post_init__(self):
        if self.sharing not in SHARING_MODES:
            raise CellError(f"unknown sharing mode {self.sharing!r}")
        if self.output_mode not in OUTPUT_MODES:
            raise CellError(f"unknown output mode {self.output_mode!r}")
        if self.act not in ACTIVATIONS:
            raise CellError(f"unknown activation {self.act!r}")
        if not self.mu > 0:
            raise CellError("surrogate half-width mu must be positive")
        if isinstance(self.integration, Conv) and self.sharing == "non":
            raise CellError("Non-Sharing dynamics are not supported with convolutional integration")
        if not np.all(np.isfinite(ad.value(self.alpha))):
            raise CellError("alpha must be finite")
        L = _n_channels(self.integration)
        for pname in ("v_th", "v_reset", "alpha", "beta"):
            shape = ad.value(getattr(self, pname)).shape
            if self.sharing == "all" and int(np.prod(shape)) != 1:
                raise CellError(f"{pname}: All-Sharing expects a scalar, got shape {shape}")
            if self.sharing == "channel" and L is not None and shape != (L,):
                raise CellError(f"{pname}: Channel-Sharing expects shape ({L},), got {shape}")
            if self.sharing == "non" and L is not None and shape != (L,):
                raise CellError(f"{pname}: Non-Sharing expects shape ({L},), got {shape}")

    def check_neuron_shape(self, neuron_shape):
        for pname in ("v_th", "v_reset", "alpha", "beta"):
            shape = ad.value(getattr(self, pname)).shape
            if self.sharing == "channel" and shape != (neuron_shape[-1],):
                raise CellError(f"{pname}: Channel-Sharing expects ({neuron_shape[-1]},), got {shape}")
            if self.sharing == "non" and shape != tuple(neuron_shape):
                raise CellError(f"{pname}: Non-Sharing expects {tuple(neuron_shape)}, got {shape}")


@dataclass(frozen=True)
class Trace:
    v_m: np.ndarray
    fired: np.ndarray
    u_m: np.ndarray


@dataclass(frozen=True)
class CellState:
    v_m: object


def init_state(params: CellParams, batch: int, neuron_shape) -> CellState:
    if batch < 1:
        raise CellError(f"batch must be >= 1, got {batch}")
    return CellState(np.zeros((batch, *neuron_shape)))


def integrate(params: CellParams, x):
    integ = params.integration
    binary = params.output_mode == "spike"
    if isinstance(integ, Free):
        return x
    if isinstance(integ, Dense):
        w = ad.value(integ.w)
        xv = ad.value(x)
        if xv.ndim != 2 or xv.shape[1] != w.shape[0]:
            raise CellError(f"{params.name}: input shape {xv.shape} does not match weights {w.shape}")
        out = ad.matmul(x, integ.w, binary_input=binary)
    elif isinstance(integ, Conv):
        k = ad.value(integ.kernel)
        xv = ad.value(x)
        if xv.ndim != 4 or xv.shape[3] != k.shape[2]:
            raise CellError(f"{params.name}: input shape {xv.shape} does not match kernel {k.shape}")
        out = ad.conv2d(x, integ.kernel, integ.padding, binary_input=binary)
    else:
        raise CellError(f"unknown integration {integ!r}")
    if integ.bias is not None:
        out = ad.add(out, integ.bias)
    return out


def _dynamics(params: CellParams, v_prev, i_t):
    u = ad.add(i_t, v_prev)
    uv = ad.value(u)
    if not np.all(np.isfinite(uv)):
        raise NumericError(params.name)
    with ad.as_other():
        # comparison and reset are selections, not arithmetic
        fired = ad.spike(ad.sub(u, params.v_th), params.mu)
        r = ad.add(ad.mul(fired, params.v_reset), ad.mul(ad.one_minus(fired), u))
    v = ad.add(ad.mul(params.alpha, r), params.beta)
    if params.output_mode == "spike":
        y = fired
    else:
        with ad.as_other():
            # activation (incl. threshold shift) is a table look-up
            z = ad.sub(u, params.v_th) if params.output_mode == "tr" else u
            y = apply_act(params.act, z, params.mu)
    return y, v, fired, u


def step(params: CellParams, state: CellState, x):
    """Advance one time step. Returns ``(y, new_state, fired)``."""
    i_t = integrate(params, x)
    if ad.value(i_t).shape != ad.value(state.v_m).shape:
        raise CellError(f"{params.name}: state shape {ad.value(state.v_m).shape} "
                        f"does not match integrated input {ad.value(i_t).shape}")
    y, v, fired, _ = _dynamics(params, state.v_m, i_t)
    return y, CellState(v), ad.value(fired)


def integrate_sequence(params: CellParams, x_seq):
    """Apply the (stateless) integration to every step of ``(B, T, ...)`` at once."""
    xv = ad.value(x_seq)
    B, Tn = xv.shape[:2]
    if isinstance(params.integration, Free):
        return x_seq
    flat = ad.reshape(x_seq, (B * Tn, *xv.shape[2:]))
    out = integrate(params, flat)
    return ad.reshape(out, (B, Tn, *ad.value(out).shape[1:]))


def run_sequence(params: CellParams, x_seq, return_trace: bool = False):
    """Unroll over ``t = 0..T-1`` from a zero state; outputs stacked on axis 1.

    With ``return_trace`` also returns a :class:`Trace` of the stacked
    post-leak potentials, fire signals and pre-fire potentials ``U``, each
    ``(B, T, ...)``.
    """
    xv = ad.value(x_seq)
    if xv.ndim < 3 or xv.shape[1] < 1:
        raise CellError(f"{params.name}: expected (B, T, ...) input, got {xv.shape}")
    i_seq = integrate_sequence(params, x_seq)
    B, Tn = xv.shape[:2]
    neuron_shape = ad.value(i_seq).shape[2:]
    params.check_neuron_shape(neuron_shape)
    v = init_state(params, B, neuron_shape).v_m
    ys, vs, fs, us = [], [], [], []
    for t in range(Tn):
        y, v, fired, u = _dynamics(params, v, ad.take_time(i_seq, t))
        ys.append(y)
        if return_trace:
            vs.append(ad.value(v))
            fs.append(ad.value(fired))
            us.append(ad.value(u))
    out = ad.stack_time(ys)
    if return_trace:
        return out, Trace(np.stack(vs, axis=1), np.stack(fs, axis=1), np.stack(us, axis=1))
    return out
