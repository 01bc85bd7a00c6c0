"""Declarative layer stacks over ``(B, T, ...)`` tensors.

A :class:`NetworkSpec` is an input :class:`ShapeRole` plus an ordered list
of :class:`LayerSpec`. Parameters live in a flat ``dict`` keyed
``"l{index:02d}.{name}"`` so they serialise straight into checkpoints.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .baselines import GruParams, LstmParams, RnnParams, run_sequence_baseline
from .cells import CellParams, Conv, Dense, Free, apply_act, run_sequence

LIAF_KINDS = ("ConvLIAF", "ConvLIF", "DenseLIAF", "DenseLIF", "DirectLIAF", "DirectLIF")
RECURRENT_KINDS = ("RNN", "LSTM", "GRU", "ConvLSTM")
CONV_KINDS = ("ConvLIAF", "ConvLIF", "ConvLSTM", "TDConv2D", "TDConv3D")
STATELESS_KINDS = ("TDConv2D", "TDConv3D", "TDDense", "TDLayerNorm", "TDBatchNorm",
                   "TDActivation", "TDAvgPool", "Dropout", "SumLayer", "Softmax", "Embedding")
ALL_KINDS = LIAF_KINDS + RECURRENT_KINDS + STATELESS_KINDS
SHAPE_TAGS = ("seq", "spatio", "flat", "spatial", "ids")

LN_EPS = 1e-5
BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class SpecError(ValueError):
    pass


class CompositionError(SpecError):
    def __init__(self, index, layer, shape, msg):
        super().__init__(f"layer {index} ({layer.kind}): {msg}; input shape {shape}")
        self.index = index


@dataclass(frozen=True)
class ShapeRole:
    """Activation shape without the batch axis, tagged by layout.

    ``seq`` (T, K); ``spatio`` (T, H, W, L); ``flat`` (L,);
    ``spatial`` (H, W, L); ``ids`` (T,) or (T, words) integer tokens.
    """

    tag: str
    dims: tuple

    def __post_init__(self):
        if self.tag not in SHAPE_TAGS:
            raise SpecError(f"unknown shape tag {self.tag!r}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if any(d < 1 for d in self.dims):
            raise SpecError(f"extents must be >= 1, got {self.dims}")
        expected = {"seq": (2,), "spatio": (4,), "flat": (1,), "spatial": (3,), "ids": (1, 2)}[self.tag]
        if len(self.dims) not in expected:
            raise SpecError(f"shape tag {self.tag!r} expects rank {expected}, got {self.dims}")

    @property
    def has_time(self):
        return self.tag in ("seq", "spatio", "ids")

    def with_batch(self, b):
        return (b, *self.dims)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int | None = None
    kernel: tuple | None = None
    padding: int | None = None
    sharing: str = "channel"
    output_mode: str | None = None
    act: str = "identity"
    pool: tuple | None = None
    rate: float = 0.0
    vocab: int | None = None
    dim: int | None = None
    trainable_dynamics: bool = True
    v_th: float = 0.5
    v_reset: float = 0.0
    alpha: float = 0.3
    beta: float = 0.0
    mu: float = 0.5

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise SpecError(f"unknown layer kind {self.kind!r}")
        if self.kernel is not None:
            object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
            if any(k % 2 == 0 or k < 1 for k in self.kernel):
                raise SpecError(f"kernel extents must be odd, got {self.kernel}")
        if self.pool is not None:
            object.__setattr__(self, "pool", tuple(int(p) for p in self.pool))
        if self.units is not None and self.units < 1:
            raise SpecError(f"units must be >= 1, got {self.units}")
        if not 0.0 <= self.rate < 1.0:
            raise SpecError(f"dropout rate must be in [0, 1), got {self.rate}")
        needs_units = LIAF_KINDS[:4] + RECURRENT_KINDS + ("TDConv2D", "TDConv3D", "TDDense")
        if self.kind in needs_units and self.units is None:
            raise SpecError(f"{self.kind} needs units")
        if self.kind in CONV_KINDS and self.kernel is None:
            object.__setattr__(self, "kernel", (3, 3, 3) if self.kind == "TDConv3D" else (3, 3))
        if self.kind == "TDConv3D" and len(self.kernel) != 3:
            raise SpecError("TDConv3D kernel is (U, I, J)")
        if self.kind in CONV_KINDS and self.kind != "TDConv3D" and len(self.kernel) != 2:
            raise SpecError(f"{self.kind} kernel is (I, J)")
        if self.kind in CONV_KINDS and self.padding is None:
            object.__setattr__(self, "padding", (self.kernel[-1] - 1) // 2)
        if self.kind == "TDAvgPool" and self.pool is None:
            raise SpecError("TDAvgPool needs pool")
        if self.kind == "Embedding" and (self.vocab is None or self.dim is None):
            raise SpecError("Embedding needs vocab and dim")
        if self.kind in ("ConvLIAF", "ConvLIF") and self.sharing == "non":
            raise SpecError("Non-Sharing dynamics are not supported with convolutional integration")
        if self.output_mode is None:
            mode = "spike" if self.kind.endswith("LIF") else "tr"
            object.__setattr__(self, "output_mode", mode)
        if self.kind.endswith("LIF") and self.output_mode != "spike":
            raise SpecError(f"{self.kind} emits spikes; output_mode must be 'spike'")

    @property
    def is_lif(self):
        return self.kind.endswith("LIF")


@dataclass(frozen=True)
class NetworkSpec:
    input: ShapeRole
    layers: tuple = field(default_factory=tuple)
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))


# ---------------------------------------------------------- serialisation

_LAYER_FIELDS = {f.name for f in dataclasses.fields(LayerSpec)}


def layer_to_dict(ls: LayerSpec) -> dict:
    d = {"kind": ls.kind}
    for f in dataclasses.fields(LayerSpec):
        v = getattr(ls, f.name)
        if f.name != "kind" and v != f.default:
            d[f.name] = list(v) if isinstance(v, tuple) else v
    return d


def layer_from_dict(d: dict) -> LayerSpec:
    unknown = set(d) - _LAYER_FIELDS
    if unknown:
        raise SpecError(f"unknown layer keys: {sorted(unknown)}")
    return LayerSpec(**d)


def spec_to_dict(spec: NetworkSpec) -> dict:
    return {"name": spec.name,
            "input": {"tag": spec.input.tag, "dims": list(spec.input.dims)},
            "layers": [layer_to_dict(ls) for ls in spec.layers]}


def spec_from_dict(d: dict) -> NetworkSpec:
    unknown = set(d) - {"name", "input", "layers"}
    if unknown:
        raise SpecError(f"unknown network keys: {sorted(unknown)}")
    inp = d["input"]
    if set(inp) - {"tag", "dims"}:
        raise SpecError(f"unknown input keys: {sorted(set(inp) - {'tag', 'dims'})}")
    return NetworkSpec(ShapeRole(inp["tag"], tuple(inp["dims"])),
                       tuple(layer_from_dict(ld) for ld in d["layers"]),
                       d.get("name", "custom"))


# -------------------------------------------------------- shape inference


def _layer_out_shape(i, ls: LayerSpec, s: ShapeRole) -> ShapeRole:
    def fail(msg):
        raise CompositionError(i, ls, s.dims, msg)

    k = ls.kind
    if k == "Embedding":
        if s.tag != "ids":
            fail("Embedding expects token ids")
        return ShapeRole("seq", (s.dims[0], ls.dim))
    if s.tag == "ids":
        fail("token ids must go through an Embedding first")
    if k in ("ConvLIAF", "ConvLIF", "ConvLSTM", "TDConv2D", "TDConv3D"):
        if s.tag != "spatio":
            fail(f"{k} expects (T, H, W, C)")
        Tn, H, W, _ = s.dims
        if k == "TDConv3D":
            U, I, J = ls.kernel
            p = ls.padding
            pt = (U - 1) // 2
            To = Tn + 2 * pt - U + 1
            Ho, Wo = H + 2 * p - I + 1, W + 2 * p - J + 1
        else:
            I, J = ls.kernel
            p = ls.padding
            To, Ho, Wo = Tn, H + 2 * p - I + 1, W + 2 * p - J + 1
        if min(To, Ho, Wo) < 1:
            fail(f"kernel {ls.kernel} larger than padded input")
        if k == "ConvLSTM" and (Ho, Wo) != (H, W):
            fail("ConvLSTM needs padding that keeps H and W (the state is convolved with itself)")
        return ShapeRole("spatio", (To, Ho, Wo, ls.units))
    if k in ("DenseLIAF", "DenseLIF", "RNN", "LSTM", "GRU"):
        if s.tag not in ("seq", "spatio"):
            fail(f"{k} expects a sequence")
        return ShapeRole("seq", (s.dims[0], ls.units))
    if k == "TDDense":
        if s.tag in ("seq", "spatio"):
            return ShapeRole("seq", (s.dims[0], ls.units))
        return ShapeRole("flat", (ls.units,))
    if k in ("DirectLIAF", "DirectLIF"):
        if not s.has_time:
            fail(f"{k} expects a time axis")
        return s
    if k in ("TDLayerNorm", "TDBatchNorm", "TDActivation", "Dropout", "Softmax"):
        return s
    if k == "TDAvgPool":
        if s.tag not in ("spatio", "spatial"):
            fail("TDAvgPool expects a feature map")
        H, W, L = s.dims[-3:]
        p, q = ls.pool
        if H % p or W % q:
            fail(f"pool {ls.pool} does not divide {(H, W)}")
        return ShapeRole(s.tag, (*s.dims[:-3], H // p, W // q, L))
    if k == "SumLayer":
        if s.tag == "seq":
            return ShapeRole("flat", (s.dims[1],))
        if s.tag == "spatio":
            return ShapeRole("spatial", s.dims[1:])
        fail("SumLayer expects a time axis")
    fail("unsupported layer")


def infer_shapes(spec: NetworkSpec) -> list:
    """Per-layer output :class:`ShapeRole` list; raises on incompatibility."""
    shapes = []
    s = spec.input
    for i, ls in enumerate(spec.layers):
        s = _layer_out_shape(i, ls, s)
        shapes.append(s)
    return shapes


def input_shapes(spec: NetworkSpec) -> list:
    return [spec.input] + infer_shapes(spec)[:-1]


def validate_classifier(spec: NetworkSpec):
    """A classifier ends in Softmax with exactly one temporal reduction before it."""
    kinds = [ls.kind for ls in spec.layers]
    if not kinds or kinds[-1] != "Softmax":
        raise SpecError("classifier must end with Softmax")
    if kinds.count("SumLayer") != 1:
        raise SpecError("classifier needs exactly one SumLayer")
    infer_shapes(spec)


# ---------------------------------------------------------- parameters


def _dyn_shape(ls: LayerSpec, out: ShapeRole):
    if ls.sharing == "all":
        return ()
    if ls.sharing == "channel":
        return (out.dims[-1],)
    return tuple(out.dims[1:])


def param_shapes(spec: NetworkSpec) -> dict:
    """Ordered ``name -> shape`` for every trainable array (BN buffers excluded)."""
    shapes = {}
    ins = input_shapes(spec)
    outs = infer_shapes(spec)
    for i, (ls, s_in, s_out) in enumerate(zip(spec.layers, ins, outs)):
        pre = f"l{i:02d}."
        k = ls.kind
        if k in ("ConvLIAF", "ConvLIF", "TDConv2D"):
            shapes[pre + "kernel"] = (*ls.kernel, s_in.dims[-1], ls.units)
            shapes[pre + "bias"] = (ls.units,)
        elif k == "TDConv3D":
            shapes[pre + "kernel"] = (*ls.kernel, s_in.dims[-1], ls.units)
            shapes[pre + "bias"] = (ls.units,)
        elif k in ("DenseLIAF", "DenseLIF", "TDDense"):
            fan_in = int(np.prod(s_in.dims[1:])) if s_in.has_time else int(np.prod(s_in.dims))
            shapes[pre + "w"] = (fan_in, ls.units)
            shapes[pre + "bias"] = (ls.units,)
        elif k == "RNN":
            K = int(np.prod(s_in.dims[1:]))
            shapes[pre + "w_c"] = (K, ls.units)
            shapes[pre + "u_c"] = (ls.units, ls.units)
            shapes[pre + "b_c"] = (ls.units,)
        elif k in ("LSTM", "GRU"):
            K = int(np.prod(s_in.dims[1:]))
            for g in ("f", "i", "o", "c") if k == "LSTM" else ("z", "r", "h"):
                shapes[pre + f"w_{g}"] = (K, ls.units)
                shapes[pre + f"u_{g}"] = (ls.units, ls.units)
                shapes[pre + f"b_{g}"] = (ls.units,)
        elif k == "ConvLSTM":
            I, J = ls.kernel
            for g in ("f", "i", "o", "c"):
                shapes[pre + f"w_{g}"] = (I, J, s_in.dims[-1], ls.units)
                shapes[pre + f"u_{g}"] = (I, J, ls.units, ls.units)
                shapes[pre + f"b_{g}"] = (ls.units,)
        elif k in ("TDLayerNorm", "TDBatchNorm"):
            shapes[pre + "gain"] = (s_in.dims[-1],)
            shapes[pre + "bias"] = (s_in.dims[-1],)
        elif k == "Embedding":
            shapes[pre + "table"] = (ls.vocab, ls.dim)
        if k in LIAF_KINDS and ls.trainable_dynamics:
            ds = _dyn_shape(ls, s_out)
            for pname in ("v_th", "v_reset", "alpha", "beta"):
                shapes[pre + pname] = ds
    return shapes


def buffer_shapes(spec: NetworkSpec) -> dict:
    shapes = {}
    for i, (ls, s_in) in enumerate(zip(spec.layers, input_shapes(spec))):
        if ls.kind == "TDBatchNorm":
            shapes[f"l{i:02d}.running_mean"] = (s_in.dims[-1],)
            shapes[f"l{i:02d}.running_var"] = (s_in.dims[-1],)
    return shapes


def _fan_in(name, shape):
    if name.endswith("kernel") or (name.split(".")[-1][:2] in ("w_", "u_") and len(shape) > 2):
        return int(np.prod(shape[:-1]))
    return shape[0]


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> dict:
    """Kaiming-uniform fan-in weights, zero biases, dynamics at the layer defaults."""
    params = {}
    by_index = {f"l{i:02d}": ls for i, ls in enumerate(spec.layers)}
    for name, shape in param_shapes(spec).items():
        lname, pname = name.split(".", 1)
        ls = by_index[lname]
        if pname in ("v_th", "v_reset", "alpha", "beta"):
            params[name] = np.full(shape, getattr(ls, pname), dtype=np.float64)
        elif pname == "gain":
            params[name] = np.ones(shape)
        elif pname == "bias" or pname.startswith("b_"):
            params[name] = np.zeros(shape)
        elif pname == "table":
            params[name] = rng.standard_normal(shape)
        else:
            bound = np.sqrt(6.0 / _fan_in(pname, shape))
            params[name] = rng.uniform(-bound, bound, size=shape)
    for name, shape in buffer_shapes(spec).items():
        params[name] = np.zeros(shape) if name.endswith("mean") else np.ones(shape)
    return params


def is_buffer(name: str) -> bool:
    return name.endswith("running_mean") or name.endswith("running_var")


# ------------------------------------------------------------- execution


def cell_params(ls: LayerSpec, i: int, P: dict) -> CellParams:
    pre = f"l{i:02d}."
    if ls.trainable_dynamics:
        dyn = {n: P[pre + n] for n in ("v_th", "v_reset", "alpha", "beta")}
    else:
        dyn = {n: np.asarray(getattr(ls, n), dtype=np.float64) for n in ("v_th", "v_reset", "alpha", "beta")}
    if ls.kind in ("ConvLIAF", "ConvLIF"):
        integ = Conv(P[pre + "kernel"], P[pre + "bias"], ls.padding)
    elif ls.kind in ("DenseLIAF", "DenseLIF"):
        integ = Dense(P[pre + "w"], P[pre + "bias"])
    else:
        integ = Free()
    sharing = ls.sharing
    if not ls.trainable_dynamics:
        sharing = "all"
    return CellParams(sharing=sharing, integration=integ, output_mode=ls.output_mode,
                      act=ls.act, mu=ls.mu, name=f"{i}:{ls.kind}", **dyn)


def _flatten_features(x, keep):
    xv = ad.value(x)
    if xv.ndim == keep + 1:
        return x
    return ad.reshape(x, (*xv.shape[:keep], int(np.prod(xv.shape[keep:]))))


def _td(x, fn, keep=2):
    """Apply ``fn`` to ``(B*T, ...)`` and fold the time axis back."""
    xv = ad.value(x)
    B, Tn = xv.shape[:2]
    y = fn(ad.reshape(x, (B * Tn, *xv.shape[2:])))
    return ad.reshape(y, (B, Tn, *ad.value(y).shape[1:]))


def _norm_axes(xv, has_time):
    start = 2 if has_time else 1
    return tuple(range(start, xv.ndim))


def td_layernorm(x, gain, bias, eps=LN_EPS, has_time=True):
    """Per-(b, t) normalisation over the remaining axes, per-channel affine."""
    xv = ad.value(x)
    axes = _norm_axes(xv, has_time)
    mu = ad.mean(x, axis=axes, keepdims=True)
    xc = ad.sub(x, mu)
    var = ad.mean(ad.mul(xc, xc), axis=axes, keepdims=True)
    xn = ad.div(xc, ad.sqrt(ad.add(var, eps)))
    return ad.add(ad.mul(xn, gain), bias)


def td_batchnorm(x, gain, bias, running_mean, running_var, training, updates=None, key=None):
    xv = ad.value(x)
    axes = tuple(range(xv.ndim - 1))
    if training:
        mu = ad.mean(x, axis=axes, keepdims=True)
        xc = ad.sub(x, mu)
        var = ad.mean(ad.mul(xc, xc), axis=axes, keepdims=True)
        if updates is not None:
            bm = ad.value(mu).reshape(-1)
            bv = ad.value(var).reshape(-1)
            updates[key + "running_mean"] = BN_MOMENTUM * running_mean + (1 - BN_MOMENTUM) * bm
            updates[key + "running_var"] = BN_MOMENTUM * running_var + (1 - BN_MOMENTUM) * bv
    else:
        xc = ad.sub(x, running_mean)
        var = running_var
    xn = ad.div(xc, ad.sqrt(ad.add(var, BN_EPS)))
    return ad.add(ad.mul(xn, gain), bias)


def embedding_lookup(table, ids):
    ids = np.asarray(ids)
    V = ad.value(table).shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise IndexError(f"token id out of range [0, {V})")
    return ad.gather_rows(table, ids)


def _lstm_from(P, pre, ls):
    gates = ("f", "i", "o", "c")
    mode = "conv" if ls.kind == "ConvLSTM" else "dense"
    return LstmParams(W={g: P[pre + f"w_{g}"] for g in gates},
                      U={g: P[pre + f"u_{g}"] for g in gates},
                      b={g: P[pre + f"b_{g}"] for g in gates},
                      mode=mode, padding=ls.padding or 0)


def apply_layer(i, ls: LayerSpec, P: dict, x, s_in: ShapeRole, training=False, rng=None, updates=None):
    pre = f"l{i:02d}."
    k = ls.kind
    if k in ("ConvLIAF", "ConvLIF", "DirectLIAF", "DirectLIF"):
        return run_sequence(cell_params(ls, i, P), x)
    if k in ("DenseLIAF", "DenseLIF"):
        return run_sequence(cell_params(ls, i, P), _flatten_features(x, 2))
    if k == "TDConv2D":
        return _td(x, lambda z: ad.add(ad.conv2d(z, P[pre + "kernel"], ls.padding), P[pre + "bias"]))
    if k == "TDConv3D":
        pad = ((ls.kernel[0] - 1) // 2, ls.padding, ls.padding)
        return ad.add(ad.conv3d(x, P[pre + "kernel"], pad), P[pre + "bias"])
    if k == "TDDense":
        if s_in.has_time:
            x = _flatten_features(x, 2)
            return _td(x, lambda z: ad.add(ad.matmul(z, P[pre + "w"]), P[pre + "bias"]))
        x = _flatten_features(x, 1)
        return ad.add(ad.matmul(x, P[pre + "w"]), P[pre + "bias"])
    if k == "RNN":
        p = RnnParams(P[pre + "w_c"], P[pre + "u_c"], P[pre + "b_c"])
        return run_sequence_baseline(p, _flatten_features(x, 2))
    if k == "GRU":
        gates = ("z", "r", "h")
        p = GruParams(W={g: P[pre + f"w_{g}"] for g in gates},
                      U={g: P[pre + f"u_{g}"] for g in gates},
                      b={g: P[pre + f"b_{g}"] for g in gates})
        return run_sequence_baseline(p, _flatten_features(x, 2))
    if k == "LSTM":
        return run_sequence_baseline(_lstm_from(P, pre, ls), _flatten_features(x, 2))
    if k == "ConvLSTM":
        return run_sequence_baseline(_lstm_from(P, pre, ls), x)
    if k == "Embedding":
        e = embedding_lookup(P[pre + "table"], x)
        if np.asarray(x).ndim == 3:
            e = ad.sum(e, axis=2)
        return e
    # zero-cost layers: activations, normalisation, pooling, reductions
    with ad.as_other():
        if k == "TDLayerNorm":
            return td_layernorm(x, P[pre + "gain"], P[pre + "bias"], has_time=s_in.has_time)
        if k == "TDBatchNorm":
            return td_batchnorm(x, P[pre + "gain"], P[pre + "bias"], P[pre + "running_mean"],
                                P[pre + "running_var"], training, updates, pre)
        if k == "TDActivation":
            return apply_act(ls.act, x, ls.mu)
        if k == "TDAvgPool":
            return ad.avg_pool2d(x, ls.pool)
        if k == "Dropout":
            if not training or ls.rate == 0.0:
                return x
            if rng is None:
                raise SpecError("Dropout in training mode needs an rng")
            keep = (rng.random(ad.value(x).shape) >= ls.rate) / (1.0 - ls.rate)
            return ad.mul(x, keep)
        if k == "SumLayer":
            return ad.mean_time(x)
        if k == "Softmax":
            return ad.softmax(x, axis=-1)
    raise SpecError(f"unsupported layer kind {k!r}")


def forward(spec: NetworkSpec, params: dict, x, training: bool = False, rng=None,
            updates: dict | None = None, per_layer=None):
    """Run the stack. ``per_layer(i, fn)`` may wrap each layer call (used for counting)."""
    shapes = input_shapes(spec)
    h = x
    for i, ls in enumerate(spec.layers):
        def call(h=h, i=i, ls=ls):
            return apply_layer(i, ls, params, h, shapes[i], training, rng, updates)
        h = per_layer(i, call) if per_layer else call()
        hv = ad.value(h)
        if not np.all(np.isfinite(hv)):
            from .cells import NumericError
            raise NumericError(f"{i}:{ls.kind}", "non-finite activation")
    return h


# ---------------------------------------------------------------- presets


def dvs_vgg_net(task: str = "cifar10", block: str = "LIAF", dropout: float = 0.5) -> NetworkSpec:
    """VGG-like DVS classifier: N conv blocks, SumLayer, M dense blocks, softmax(10).

    ``block`` is ``LIAF``, ``LIF`` or one of ``TDConv2D``, ``TDConv3D``,
    ``ConvLSTM`` (the spatiotemporal layer replacing ConvLIAF).
    """
    if task == "cifar10":
        convs = [(32, 2), (64, 2), (128, 2), (256, 2), (512, 4)]
        dense = [512]
        inp = ShapeRole("spatio", (10, 128, 128, 2))
    elif task == "mnist":
        convs = [(32, 2), (64, 2), (128, 2)]
        dense = [512, 128]
        inp = ShapeRole("spatio", (20, 40, 40, 2))
    else:
        raise SpecError(f"unknown DVS task {task!r}")
    layers = []
    for units, p in convs:
        if block == "LIF":
            layers += [LayerSpec("TDConv2D", units, (3, 3), 1),
                       LayerSpec("TDLayerNorm"),
                       LayerSpec("TDAvgPool", pool=(p, p)),
                       LayerSpec("DirectLIF", sharing="channel")]
            continue
        if block == "LIAF":
            first = LayerSpec("ConvLIAF", units, (3, 3), 1, sharing="channel", output_mode="tr", act="identity")
        elif block in ("TDConv2D", "ConvLSTM"):
            first = LayerSpec(block, units, (3, 3), 1)
        elif block == "TDConv3D":
            first = LayerSpec("TDConv3D", units, (3, 3, 3), 1)
        else:
            raise SpecError(f"unknown block {block!r}")
        layers += [first, LayerSpec("TDLayerNorm"), LayerSpec("TDActivation", act="relu"),
                   LayerSpec("TDAvgPool", pool=(p, p))]
    layers.append(LayerSpec("SumLayer"))
    for units in dense:
        layers += [LayerSpec("Dropout", rate=dropout), LayerSpec("TDDense", units)]
    layers += [LayerSpec("TDDense", 10), LayerSpec("Softmax")]
    return NetworkSpec(inp, tuple(layers), f"dvs_{task}_{block}")


GESTURE_DYN = dict(sharing="all", output_mode="ntr", act="selu", trainable_dynamics=False,
                   v_th=0.5, v_reset=0.0, alpha=0.3, beta=0.0)


def gesture_net(neuron: str = "LIAF") -> NetworkSpec:
    """DVS128 gesture topology: 3 conv blocks, 2 dense blocks, 11 classes."""
    direct = {"LIAF": "DirectLIAF", "LIF": "DirectLIF"}[neuron]
    dyn = dict(GESTURE_DYN)
    if neuron == "LIF":
        dyn.update(output_mode="spike", act="identity")
    layers = []
    for units, pool in ((64, None), (128, 2), (128, 2)):
        layers += [LayerSpec("TDConv2D", units, (3, 3), 1), LayerSpec("TDBatchNorm"),
                   LayerSpec("TDActivation", act="selu")]
        if pool:
            layers += [LayerSpec("TDAvgPool", pool=(pool, pool)), LayerSpec(direct, **dyn)]
    for units in (256, 11):
        layers += [LayerSpec("TDDense", units), LayerSpec("TDBatchNorm"), LayerSpec(direct, **dyn)]
    layers += [LayerSpec("SumLayer"), LayerSpec("Softmax")]
    return NetworkSpec(ShapeRole("spatio", (60, 32, 32, 2)), tuple(layers), f"gesture_{neuron}")


def babi_net(vocab: int, temporal: str = "DenseLIAF", seq_len: int = 65, words: int | None = None,
             embed: int = 50, hidden: int = 100) -> NetworkSpec:
    """Single temporal layer between a word embedding and a vocabulary softmax."""
    dims = (seq_len,) if words is None else (seq_len, words)
    t_kw = {}
    if temporal in LIAF_KINDS:
        t_kw = dict(sharing="non", output_mode="spike" if temporal.endswith("LIF") else "ntr")
    layers = (LayerSpec("Embedding", vocab=vocab, dim=embed),
              LayerSpec(temporal, hidden, **t_kw),
              LayerSpec("SumLayer"),
              LayerSpec("TDDense", vocab),
              LayerSpec("Softmax"))
    return NetworkSpec(ShapeRole("ids", dims), layers, f"babi_{temporal}")


def moving_bar_net(neuron: str = "LIAF", ablate_dynamics: bool = False, filters=(8, 16),
                   T: int = 8, size: int = 16, classes: int = 4) -> NetworkSpec:
    """Small two-block classifier for the moving-bar toy task."""
    layers = []
    for units in filters:
        if neuron == "LIAF":
            kw = dict(sharing="channel", output_mode="tr", act="identity")
            if ablate_dynamics:
                kw.update(trainable_dynamics=False, alpha=0.0, beta=0.0)
            layers += [LayerSpec("ConvLIAF", units, (3, 3), 1, **kw), LayerSpec("TDLayerNorm"),
                       LayerSpec("TDActivation", act="relu"), LayerSpec("TDAvgPool", pool=(2, 2))]
        elif neuron == "LIF":
            layers += [LayerSpec("TDConv2D", units, (3, 3), 1), LayerSpec("TDLayerNorm"),
                       LayerSpec("TDAvgPool", pool=(2, 2)), LayerSpec("DirectLIF", sharing="channel")]
        elif neuron == "stateless":
            layers += [LayerSpec("TDConv2D", units, (3, 3), 1), LayerSpec("TDLayerNorm"),
                       LayerSpec("TDActivation", act="relu"), LayerSpec("TDAvgPool", pool=(2, 2))]
        else:
            raise SpecError(f"unknown neuron {neuron!r}")
    layers += [LayerSpec("SumLayer"), LayerSpec("TDDense", classes), LayerSpec("Softmax")]
    name = f"moving_bar_{neuron}" + ("_ablated" if ablate_dynamics else "")
    return NetworkSpec(ShapeRole("spatio", (T, size, size, 2)), tuple(layers), name)


def recall_net(kind: str = "DenseLIAF", T: int = 20, vocab: int = 10, classes: int = 8,
               embed: int = 16, hidden: int = 64) -> NetworkSpec:
    """Embedding, one temporal (or stateless) layer, temporal mean, softmax."""
    if kind == "DenseLIAF":
        mid = [LayerSpec("DenseLIAF", hidden, sharing="non", output_mode="tr", act="relu")]
    elif kind == "stateless":
        mid = [LayerSpec("TDDense", hidden), LayerSpec("TDActivation", act="relu")]
    elif kind in ("LSTM", "GRU", "RNN"):
        mid = [LayerSpec(kind, hidden)]
    else:
        raise SpecError(f"unknown recall layer {kind!r}")
    layers = [LayerSpec("Embedding", vocab=vocab, dim=embed), *mid,
              LayerSpec("SumLayer"), LayerSpec("TDDense", classes), LayerSpec("Softmax")]
    return NetworkSpec(ShapeRole("ids", (T,)), tuple(layers), f"recall_{kind}")


PRESETS = {
    "cifar10_dvs": lambda: dvs_vgg_net("cifar10", "LIAF"),
    "cifar10_dvs_lif": lambda: dvs_vgg_net("cifar10", "LIF"),
    "cifar10_dvs_conv2d": lambda: dvs_vgg_net("cifar10", "TDConv2D"),
    "cifar10_dvs_conv3d": lambda: dvs_vgg_net("cifar10", "TDConv3D"),
    "cifar10_dvs_convlstm": lambda: dvs_vgg_net("cifar10", "ConvLSTM"),
    "mnist_dvs": lambda: dvs_vgg_net("mnist", "LIAF"),
    "mnist_dvs_lif": lambda: dvs_vgg_net("mnist", "LIF"),
    "gesture": lambda: gesture_net("LIAF"),
    "gesture_lif": lambda: gesture_net("LIF"),
    "babi_liaf": lambda: babi_net(50, "DenseLIAF"),
    "babi_lif": lambda: babi_net(50, "DenseLIF"),
    "babi_rnn": lambda: babi_net(50, "RNN"),
    "babi_lstm": lambda: babi_net(50, "LSTM"),
    "babi_gru": lambda: babi_net(50, "GRU"),
    "moving_bar": lambda: moving_bar_net("LIAF"),
    "moving_bar_lif": lambda: moving_bar_net("LIF"),
    "moving_bar_ablated": lambda: moving_bar_net("LIAF", ablate_dynamics=True),
    "moving_bar_stateless": lambda: moving_bar_net("stateless"),
    "recall": lambda: recall_net("DenseLIAF"),
    "recall_stateless": lambda: recall_net("stateless"),
}


def preset(name: str) -> NetworkSpec:
    try:
        return PRESETS[name]()
    except KeyError:
        raise SpecError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def swap_spatiotemporal(spec: NetworkSpec, kind: str, dynamics: dict | None = None) -> NetworkSpec:
    """Replace every convolutional layer with ``kind``, keeping units and kernel size.

    ``dynamics`` overrides the LIAF/LIF dynamics fields of the new layers
    (sharing, trainable_dynamics, v_th, ...); by default they are copied.
    """
    layers = []
    for ls in spec.layers:
        if ls.kind in CONV_KINDS:
            kernel = ls.kernel[-2:]
            if kind == "TDConv3D":
                kernel = (3, *kernel)
            kw = dict(units=ls.units, kernel=kernel, padding=ls.padding)
            if kind in ("ConvLIAF", "ConvLIF"):
                kw.update(sharing=ls.sharing if ls.sharing != "non" else "channel",
                          trainable_dynamics=ls.trainable_dynamics,
                          v_th=ls.v_th, v_reset=ls.v_reset, alpha=ls.alpha, beta=ls.beta)
                kw.update(dynamics or {})
                kw["output_mode"] = "spike" if kind == "ConvLIF" else kw.get("output_mode", ls.output_mode)
                if kind == "ConvLIAF" and kw["output_mode"] == "spike":
                    kw["output_mode"] = "tr"
            ls = LayerSpec(kind, **kw)
        layers.append(ls)
    return NetworkSpec(spec.input, tuple(layers), f"{spec.name}:{kind}")
