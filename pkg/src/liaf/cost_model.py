"""Multiplication / addition / weight counts per layer.

Two independent routes produce the same numbers:

* :func:`layer_cost_analytical` evaluates closed-form per-step formulas
  (times the number of steps);
* :func:`instrumented_count` runs the real forward pass with an
  :class:`~liaf.autodiff.OpCounter` attached and tallies every scalar
  multiply and add the kernels perform.

Counting conventions shared by both routes, for batch size one:

* activations, pooling, normalisation, softmax, temporal mean, threshold
  comparison and the reset switch are look-ups/selections (bucket
  ``other``, zero cost);
* integration of binary spike input (LIF layers) is a selection of weight
  rows: additions only;
* ``1 - z`` in the GRU update is a look-up (``1 - sigmoid(x) = sigmoid(-x)``);
* weights include biases and, when trainable, the four dynamics
  parameters sized by the sharing mode.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from . import autodiff as ad
from . import network as N


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class LayerCost:
    muls: int = 0
    adds: int = 0
    weights: int = 0

    def __post_init__(self):
        for f in ("muls", "adds", "weights"):
            v = getattr(self, f)
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise AnalysisError(f"{f} must be a non-negative integer, got {v!r}")
            object.__setattr__(self, f, int(v))

    def __add__(self, other):
        return LayerCost(self.muls + other.muls, self.adds + other.adds, self.weights + other.weights)


@dataclass
class CostEntry:
    index: int
    name: str
    cost: LayerCost
    source: str  # "analytical" | "instrumented"


@dataclass
class CostReport:
    per_layer: list = field(default_factory=list)

    @property
    def totals(self) -> LayerCost:
        total = LayerCost()
        for e in self.per_layer:
            total = total + e.cost
        return total

    def savings(self, reference: "CostReport") -> dict:
        """Percent reduction of this report's totals against ``reference``."""
        a, b = self.totals, reference.totals
        return {f: percent_saving(getattr(a, f), getattr(b, f)) for f in ("muls", "adds", "weights")}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "name", "muls", "adds", "weights", "source"])
        for e in self.per_layer:
            w.writerow([e.index, e.name, e.cost.muls, e.cost.adds, e.cost.weights, e.source])
        return buf.getvalue()

    def to_table(self) -> str:
        rows = [("layer", "name", "MULs", "ADDs", "weights", "source")]
        for e in self.per_layer:
            rows.append((str(e.index), e.name, f"{e.cost.muls:,}", f"{e.cost.adds:,}",
                         f"{e.cost.weights:,}", e.source))
        t = self.totals
        rows.append(("", "total", f"{t.muls:,}", f"{t.adds:,}", f"{t.weights:,}", ""))
        widths = [max(len(r[i]) for r in rows) for i in range(6)]
        lines = ["  ".join(c.rjust(w) if j >= 2 and j < 5 else c.ljust(w)
                           for j, (c, w) in enumerate(zip(r, widths))) for r in rows]
        return "\n".join(lines)


def percent_saving(a, b) -> float:
    """``(1 - a / b) * 100``."""
    if b == 0:
        raise AnalysisError("reference count is zero")
    return (1.0 - a / b) * 100.0


def round_half_up(x: float, digits: int = 1) -> float:
    q = Decimal(1).scaleb(-digits)
    return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))


# ------------------------------------------------------------ analytical


def _dynamics_count(ls: N.LayerSpec, out: N.ShapeRole) -> int:
    if ls.kind not in N.LIAF_KINDS or not ls.trainable_dynamics:
        return 0
    if ls.sharing == "all":
        return 4
    if ls.sharing == "channel":
        return 4 * out.dims[-1]
    return 4 * int(np.prod(out.dims[1:]))


def _features(s: N.ShapeRole) -> int:
    return int(np.prod(s.dims[1:])) if s.has_time else int(np.prod(s.dims))


def layer_cost_analytical(ls: N.LayerSpec, in_shape: N.ShapeRole, timesteps: int | None = None) -> LayerCost:
    """Closed-form cost of one layer over a whole sequence at batch size one.

    ``timesteps`` defaults to the sequence length carried by ``in_shape``
    (1 for inputs without a time axis).
    """
    out = N._layer_out_shape(0, ls, in_shape)
    Tn = timesteps if timesteps is not None else (in_shape.dims[0] if in_shape.has_time else 1)
    k = ls.kind
    dyn = _dynamics_count(ls, out)

    if k in ("DenseLIAF", "DenseLIF", "RNN", "GRU", "LSTM"):
        K, L = _features(in_shape), ls.units
        per = {
            "DenseLIAF": (L * (K + 1), L * (K + 2), L * (K + 1)),
            "DenseLIF": (L, L * (K + 2), L * (K + 1)),
            "RNN": (L * (L + K), L * (L + K), L * (L + K + 1)),
            "GRU": (3 * L * (L + K + 1), L * (3 * (L + K) + 1), 3 * L * (L + K + 1)),
            "LSTM": (L * (4 * (L + K) + 3), L * (4 * (L + K) + 1), 4 * L * (L + K + 1)),
        }[k]
        return LayerCost(per[0] * Tn, per[1] * Tn, per[2] + dyn)

    if k in ("ConvLIAF", "ConvLIF", "TDConv2D", "TDConv3D", "ConvLSTM"):
        _, H, W, L = out.dims
        Kc = in_shape.dims[-1]
        I, J = ls.kernel[-2:]
        Q = I * J * Kc
        R = Tn * H * W * L
        if k == "ConvLIAF":
            return LayerCost((Q + 1) * R, (Q + 2) * R, (Q + 1) * L + dyn)
        if k == "ConvLIF":
            return LayerCost(R, (Q + 2) * R, (Q + 1) * L + dyn)
        if k == "TDConv2D":
            return LayerCost(Q * R, Q * R, (Q + 1) * L)
        if k == "TDConv3D":
            U = ls.kernel[0]
            return LayerCost(U * Q * R, U * Q * R, (U * Q + 1) * L)
        IJL = I * J * L
        return LayerCost((4 * (Q + IJL) + 3) * R, (4 * (Q + IJL) + 1) * R, 4 * L * (Q + IJL + 1))

    if k in ("DirectLIAF", "DirectLIF"):
        n = int(np.prod(out.dims[1:]))
        return LayerCost(n * Tn, 2 * n * Tn, dyn)

    if k == "TDDense":
        K, L = _features(in_shape), ls.units
        steps = Tn if in_shape.has_time else 1
        return LayerCost(K * L * steps, K * L * steps, L * (K + 1))

    if k == "Embedding":
        words = in_shape.dims[1] if len(in_shape.dims) == 2 else 1
        return LayerCost(0, Tn * (words - 1) * ls.dim, ls.vocab * ls.dim)

    if k in ("TDLayerNorm", "TDBatchNorm"):
        return LayerCost(0, 0, 2 * in_shape.dims[-1])

    if k in ("TDActivation", "TDAvgPool", "Dropout", "SumLayer", "Softmax"):
        return LayerCost()

    raise AnalysisError(f"unsupported layer kind {k!r}")


def network_cost(spec: N.NetworkSpec, in_shape: N.ShapeRole | None = None, only=None) -> CostReport:
    """Analytical per-layer report. ``only`` restricts to a set of layer kinds."""
    if in_shape is not None:
        spec = N.NetworkSpec(in_shape, spec.layers, spec.name)
    report = CostReport()
    for i, (ls, s_in) in enumerate(zip(spec.layers, N.input_shapes(spec))):
        if only is not None and ls.kind not in only:
            continue
        report.per_layer.append(CostEntry(i, ls.kind, layer_cost_analytical(ls, s_in), "analytical"))
    return report


def spatiotemporal_cost(spec: N.NetworkSpec, kind: str, dynamics: dict | None = None) -> CostReport:
    """Cost of the convolutional layers only, after swapping them to ``kind``."""
    swapped = N.swap_spatiotemporal(spec, kind, dynamics)
    return network_cost(swapped, only=N.CONV_KINDS)


# ----------------------------------------------------------- instrumented


def instrumented_count(spec: N.NetworkSpec, params: dict, x) -> CostReport:
    """Run a forward pass with op counting; counts are per sample.

    Weights are the sizes of each layer's trainable arrays.
    """
    xv = np.asarray(x)
    B = xv.shape[0]
    counters = {}

    def per_layer(i, call):
        c = counters[i] = ad.OpCounter()
        with ad.counting(c):
            return call()

    N.forward(spec, params, x, training=False, per_layer=per_layer)
    report = CostReport()
    for i, ls in enumerate(spec.layers):
        c = counters[i]
        if c.muls % B or c.adds % B:
            raise AnalysisError(f"layer {i}: counts {c.muls}/{c.adds} not divisible by batch {B}")
        pre = f"l{i:02d}."
        weights = sum(int(np.asarray(v).size) for name, v in params.items()
                      if name.startswith(pre) and not N.is_buffer(name))
        report.per_layer.append(CostEntry(i, ls.kind, LayerCost(c.muls // B, c.adds // B, weights),
                                          "instrumented"))
    return report


def first_mismatch(a: CostReport, b: CostReport):
    """Index of the first layer whose costs differ, or ``None``."""
    for ea, eb in zip(a.per_layer, b.per_layer):
        if ea.cost != eb.cost:
            return ea.index
    if len(a.per_layer) != len(b.per_layer):
        return min(len(a.per_layer), len(b.per_layer))
    return None
