"""Mini-batch BPTT training and evaluation for classifier networks."""

from __future__ import annotations

import dataclasses
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import autodiff as ad
from . import checkpoint as ckpt
from . import network as N
from .cells import NumericError
from .optim import PlateauSchedule, make_optimizer

METRICS_HEADER = "epoch,lr,train_loss,train_acc,val_loss,val_acc,wall_s\n"


class TrainingAborted(RuntimeError):
    def __init__(self, epoch, cause):
        super().__init__(f"training aborted in epoch {epoch}: {cause}")
        self.epoch = epoch


@dataclass
class TrainSettings:
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    optimizer: dict = field(default_factory=lambda: {"name": "adam", "lr": 1e-3})
    schedule: dict | None = None
    mu: float | None = None
    jobs: int = 1
    wall_time: bool = False


def with_mu(spec: N.NetworkSpec, mu: float | None) -> N.NetworkSpec:
    """Override the surrogate half-width of every layer that has one."""
    if mu is None:
        return spec
    layers = tuple(dataclasses.replace(ls, mu=mu) if ls.kind in N.LIAF_KINDS else ls for ls in spec.layers)
    return N.NetworkSpec(spec.input, layers, spec.name)


def one_hot(y, classes):
    out = np.zeros((len(y), classes))
    out[np.arange(len(y)), y] = 1.0
    return out


def predict(probs) -> np.ndarray:
    """Arg-max per row; ties go to the lowest class index."""
    return np.argmax(np.asarray(probs), axis=-1)


def evaluate(spec, params, x, y, batch_size: int = 256):
    """Mean cross-entropy, accuracy and predictions in inference mode."""
    classes = N.infer_shapes(spec)[-1].dims[-1]
    loss_sum, preds = 0.0, []
    for s in range(0, len(y), batch_size):
        p = N.forward(spec, params, x[s:s + batch_size], training=False)
        loss_sum += float(ad.cross_entropy(p, one_hot(y[s:s + batch_size], classes))) * len(p)
        preds.append(predict(p))
    pred = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    n = max(len(y), 1)
    return loss_sum / n, float(np.mean(pred == y)) if len(y) else 0.0, pred


def confusion_matrix(y, pred, classes) -> np.ndarray:
    m = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(m, (np.asarray(y), np.asarray(pred)), 1)
    return m


def _shard_grad(spec, params, names, xb, yb, classes, rng, scale):
    leaves = {n: ad.Var(params[n], name=n) for n in names}
    P = {**params, **leaves}
    updates = {}
    with ad.Tape() as tape:
        probs = N.forward(spec, P, xb, training=True, rng=rng, updates=updates)
        loss = ad.cross_entropy(probs, one_hot(yb, classes))
    lv = float(ad.value(loss))
    if not np.isfinite(lv):
        raise NumericError("loss", "non-finite loss")
    tape.backward(loss)
    grads = {n: (v.grad if v.grad is not None else np.zeros_like(v.value)) * scale for n, v in leaves.items()}
    correct = int(np.sum(predict(ad.value(probs)) == yb))
    return grads, lv * scale, correct, updates


def train_step(spec, params, opt, xb, yb, classes, rng, jobs=1, pool=None):
    """One optimiser step. With ``jobs > 1`` the batch is split into shards
    whose gradients are summed in shard order."""
    names = [n for n in params if not N.is_buffer(n)]
    B = len(yb)
    if jobs <= 1 or B < 2:
        results = [_shard_grad(spec, params, names, xb, yb, classes, rng, 1.0)]
    else:
        bounds = np.linspace(0, B, min(jobs, B) + 1).astype(int)
        shard_rngs = rng.spawn(len(bounds) - 1)
        futs = [pool.submit(_shard_grad, spec, params, names, xb[a:b], yb[a:b], classes, r, (b - a) / B)
                for (a, b), r in zip(zip(bounds[:-1], bounds[1:]), shard_rngs)]
        results = [f.result() for f in futs]
    grads = {n: np.zeros_like(params[n]) for n in names}
    loss, correct = 0.0, 0
    for g, lv, c, _ in results:
        for n in names:
            grads[n] += g[n]
        loss += lv
        correct += c
    opt.step(params, grads)
    for name, v in results[0][3].items():
        params[name] = v
    return loss, correct


def _fmt(v) -> str:
    return format(float(v), ".10g")


def _meta(spec, epoch, rng, settings, extra=None):
    m = {"spec": N.spec_to_dict(spec), "epoch": epoch, "rng": rng.bit_generator.state,
         "seed": settings.seed, "optimizer": settings.optimizer}
    m.update(extra or {})
    return m


def save_checkpoint(path, spec, params, opt, epoch, rng, settings, extra=None):
    arrays = {f"param.{k}": v for k, v in params.items()}
    arrays.update(opt.state())
    ckpt.save(path, arrays, _meta(spec, epoch, rng, settings, extra))


def load_checkpoint(path):
    """Returns ``(spec, params, meta, opt_arrays)``."""
    arrays, meta = ckpt.load(path)
    if meta is None or "spec" not in meta:
        raise ckpt.CheckpointError(f"{path}: missing network spec")
    spec = N.spec_from_dict(meta["spec"])
    params = {k[len("param."):]: v for k, v in arrays.items() if k.startswith("param.")}
    opt_arrays = {k: v for k, v in arrays.items() if k.startswith("__opt__.")}
    return spec, params, meta, opt_arrays


def train(spec: N.NetworkSpec, data, settings: TrainSettings, out_dir, log=None):
    """Train on ``data.x_train`` and validate on ``data.x_test`` every epoch.

    Writes ``metrics.csv``, ``last.ckpt`` (after every epoch, so it is the
    last good state on abort) and ``best.ckpt`` (highest val accuracy).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = with_mu(spec, settings.mu)
    N.validate_classifier(spec)
    classes = N.infer_shapes(spec)[-1].dims[-1]
    rng = np.random.default_rng(settings.seed)
    params = N.init_params(spec, rng)
    opt_kw = {k: v for k, v in settings.optimizer.items() if k != "name"}
    opt = make_optimizer(settings.optimizer.get("name", "adam"), **opt_kw)
    sched = PlateauSchedule(**settings.schedule) if settings.schedule else None

    x, y = data.x_train, data.y_train
    history, rows = [], []
    best_acc, last_reduce = -1.0, 0
    metrics_path = out / "metrics.csv"
    metrics_path.write_text(METRICS_HEADER, newline="\n")
    save_checkpoint(out / "last.ckpt", spec, params, opt, 0, rng, settings)
    if settings.epochs == 0:
        save_checkpoint(out / "best.ckpt", spec, params, opt, 0, rng, settings)

    with threadpool_limits(limits=1), ThreadPoolExecutor(max_workers=max(settings.jobs, 1)) as pool:
        for epoch in range(1, settings.epochs + 1):
            t0 = time.perf_counter()
            order = rng.permutation(len(y))
            loss_sum, correct = 0.0, 0
            try:
                for s in range(0, len(y), settings.batch_size):
                    idx = order[s:s + settings.batch_size]
                    lv, c = train_step(spec, params, opt, x[idx], y[idx], classes, rng, settings.jobs, pool)
                    loss_sum += lv * len(idx)
                    correct += c
                val_loss, val_acc, _ = evaluate(spec, params, data.x_test, data.y_test)
                if not np.isfinite(val_loss):
                    raise NumericError("val", "non-finite validation loss")
            except NumericError as e:
                raise TrainingAborted(epoch, e) from e
            lr = opt.lr
            history.append(val_loss)
            row = [str(epoch), _fmt(lr), _fmt(loss_sum / len(y)), _fmt(correct / len(y)),
                   _fmt(val_loss), _fmt(val_acc),
                   _fmt(time.perf_counter() - t0) if settings.wall_time else ""]
            rows.append(row)
            with open(metrics_path, "a", newline="\n") as f:
                f.write(",".join(row) + "\n")
            if log:
                log(f"epoch {epoch}: loss {loss_sum / len(y):.4f} acc {correct / len(y):.3f} "
                    f"val_loss {val_loss:.4f} val_acc {val_acc:.3f}")
            save_checkpoint(out / "last.ckpt", spec, params, opt, epoch, rng, settings, {"val_acc": val_acc})
            if val_acc > best_acc:
                best_acc = val_acc
                save_checkpoint(out / "best.ckpt", spec, params, opt, epoch, rng, settings, {"val_acc": val_acc})
            if sched is not None:
                new_lr = sched.next_lr(opt.lr, history, last_reduce)
                if new_lr != opt.lr:
                    opt.lr, last_reduce = new_lr, len(history)
    return params, rows
