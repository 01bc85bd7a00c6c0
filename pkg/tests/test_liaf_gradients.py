"""BPTT through LIAF layers against finite differences, away from the surrogate window.

Outside |U - V_th| < mu the spike is locally constant, so the surrogate
gradient is the true derivative and central differences must agree.
"""

import numpy as np
import pytest

from liaf import autodiff as ad
from liaf import network as N
from liaf.cells import run_sequence
from oracles import central_diff, rel_err

MU = 0.02
MARGIN = 1e-3


def _draw(kind, rng):
    if kind == "DenseLIAF":
        spec = N.NetworkSpec(N.ShapeRole("seq", (6, 4)),
                             (N.LayerSpec(kind, 3, sharing="non", output_mode="ntr", act="tanh", mu=MU),))
        x = rng.uniform(0, 1, (2, 6, 4))
    else:
        spec = N.NetworkSpec(N.ShapeRole("spatio", (4, 4, 4, 2)),
                             (N.LayerSpec(kind, 2, (3, 3), 1, sharing="channel", output_mode="tr", act="tanh",
                                          mu=MU),))
        x = rng.uniform(0, 1, (1, 4, 4, 4, 2))
    P = N.init_params(spec, rng)
    for k in P:
        if k.endswith(("w", "kernel", "bias")):
            P[k] = rng.standard_normal(P[k].shape) * 0.6
    P["l00.v_th"] = rng.uniform(0.2, 0.8, P["l00.v_th"].shape)
    P["l00.v_reset"] = rng.uniform(-0.3, 0.1, P["l00.v_reset"].shape)
    P["l00.alpha"] = rng.uniform(0.2, 0.9, P["l00.alpha"].shape)
    P["l00.beta"] = rng.uniform(-0.1, 0.1, P["l00.beta"].shape)
    return spec, P, x


def _clear_of_window(spec, P, x):
    _, tr = run_sequence(N.cell_params(spec.layers[0], 0, P), x, return_trace=True)
    v_th = np.broadcast_to(P["l00.v_th"], tr.u_m.shape[2:])
    gap = np.abs(tr.u_m - v_th).min()
    return gap >= MU + MARGIN and tr.fired.any() and not tr.fired.all()


def liaf_gradient_check(kind, seed, points=50):
    """Worst relative error over ``points`` random parameter/input coordinates."""
    rng = np.random.default_rng(seed)
    for _ in range(10000):
        spec, P, x = _draw(kind, rng)
        if _clear_of_window(spec, P, x):
            break
    else:
        raise RuntimeError("no trajectory clear of the surrogate window")
    base = dict(P, x=x)
    wy = rng.standard_normal(N.forward(spec, P, x).shape)

    def loss(d):
        params = {k: v for k, v in d.items() if k != "x"}
        return ad.sum(ad.mul(N.forward(spec, params, d["x"]), wy))

    leaves = {k: ad.Var(v) for k, v in base.items()}
    with ad.Tape() as tape:
        out = loss(leaves)
    tape.backward(out)
    names = sorted(base)
    worst = 0.0
    for _ in range(points):
        n = names[rng.integers(len(names))]
        idx = tuple(int(rng.integers(s)) for s in base[n].shape)
        fd = central_diff(lambda: float(loss(base)), base, n, idx)
        g = leaves[n].grad[idx]
        worst = max(worst, rel_err(g, fd) if abs(fd) > 1e-6 else abs(g - fd))
    return worst


@pytest.mark.parametrize("kind", ["DenseLIAF", "ConvLIAF"])
def test_liaf_bptt_matches_finite_differences(kind):
    assert liaf_gradient_check(kind, seed=0) <= 1e-4


def test_rejection_rule_detects_window():
    rng = np.random.default_rng(1)
    spec, P, x = _draw("DenseLIAF", rng)
    P["l00.v_th"] = np.full_like(P["l00.v_th"], 0.5)
    x0 = np.zeros((1, 1, 4))
    P["l00.w"] = np.zeros_like(P["l00.w"])
    P["l00.bias"] = np.full_like(P["l00.bias"], 0.5 + MU / 2)
    assert not _clear_of_window(spec, P, x0)
