"""``liaf`` command line: preprocess, train, eval, count.

Exit codes: 0 ok, 2 input error, 3 numeric failure, 4 verification mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import cost_model as C
from . import events as E
from . import network as N
from . import tasks
from . import training as TR
from .cells import NumericError

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_MISMATCH = 0, 2, 3, 4

TRAIN_KEYS = {"preset", "network", "data", "optimizer", "schedule", "seed", "epochs",
              "batch_size", "mu", "out", "wall_time"}
DATA_KEYS = {"task", "n", "seed", "train", "val"}
OPT_KEYS = {"name", "lr", "beta1", "beta2", "eps", "weight_decay", "clip_norm", "momentum"}
SCHED_KEYS = {"factor", "patience", "min_lr"}
BIN_KEYS = {"window_us", "T", "crop", "crop_size", "downsample", "accumulation", "sensor",
            "stride", "t0", "label"}
MANIFEST_HEADER = ["file", "label", "T", "H", "W", "C", "events"]


class ConfigError(ValueError):
    pass


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {extra}")


def load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None


def validate_train_config(cfg: dict, base: Path = Path(".")) -> dict:
    _check_keys(cfg, TRAIN_KEYS, "config")
    if ("preset" in cfg) == ("network" in cfg):
        raise ConfigError("config: give exactly one of 'preset' or 'network'")
    if "data" not in cfg:
        raise ConfigError("config: missing 'data'")
    _check_keys(cfg["data"], DATA_KEYS, "config.data")
    _check_keys(cfg.get("optimizer", {}), OPT_KEYS, "config.optimizer")
    if cfg.get("schedule") is not None:
        _check_keys(cfg["schedule"], SCHED_KEYS, "config.schedule")
    data = cfg["data"]
    if "task" in data:
        if "train" in data or "val" in data:
            raise ConfigError("config.data: 'task' excludes 'train'/'val'")
    else:
        for k in ("train", "val"):
            if k not in data:
                raise ConfigError(f"config.data: missing '{k}'")
            if not (base / data[k]).exists():
                raise ConfigError(f"config.data.{k}: path {data[k]!r} does not exist")
    for k in ("epochs", "batch_size", "seed"):
        if k in cfg and (not isinstance(cfg[k], int) or cfg[k] < (1 if k == "batch_size" else 0)):
            raise ConfigError(f"config.{k}: expected a non-negative integer")
    return cfg


def spec_from_config(cfg) -> N.NetworkSpec:
    if "preset" in cfg:
        return N.preset(cfg["preset"])
    return N.spec_from_dict(cfg["network"])


def load_manifest(path):
    path = Path(path)
    xs, ys = [], []
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    for r in rows:
        clip = E.read_clip(path.parent / r["file"])
        if r["label"] == "":
            raise ConfigError(f"{path}: clip {r['file']} has no label")
        xs.append(clip.tensor)
        ys.append(int(r["label"]))
    if not xs:
        raise ConfigError(f"{path}: empty manifest")
    return np.stack(xs), np.array(ys, dtype=np.int64)


def load_split(path):
    path = Path(path)
    if path.suffix == ".csv":
        return load_manifest(path)
    return tasks.read_sequences(path)


def dataset_from_config(cfg, base: Path = Path(".")):
    data = cfg["data"]
    if "task" in data:
        return tasks.generate(data["task"], data.get("seed", 0), data.get("n", 800))
    xt, yt = load_split(base / data["train"])
    xv, yv = load_split(base / data["val"])
    return tasks.Dataset(xt, yt, xv, yv, int(max(yt.max(), yv.max())) + 1)


def settings_from_config(cfg, seed=None, jobs=1, wall_time=False) -> TR.TrainSettings:
    opt = {"name": "adam", "lr": 1e-3, **cfg.get("optimizer", {})}
    return TR.TrainSettings(epochs=cfg.get("epochs", 10), batch_size=cfg.get("batch_size", 32),
                            seed=cfg.get("seed", 0) if seed is None else seed, optimizer=opt,
                            schedule=cfg.get("schedule"), mu=cfg.get("mu"), jobs=jobs,
                            wall_time=wall_time or cfg.get("wall_time", False))


# -------------------------------------------------------------- commands


def _binning(cfg):
    kw = {k: v for k, v in cfg.items() if k != "label"}
    for k in ("crop_size", "sensor"):
        if k in kw:
            kw[k] = tuple(kw[k])
    if isinstance(kw.get("crop"), list):
        kw["crop"] = tuple(tuple(p) for p in kw["crop"])
    return E.BinningCfg(**kw)


def _preprocess_one(path, bcfg, label, out):
    ev = E.read_events(path)
    clips = E.bin_events(ev, bcfg, label) if len(ev) else []
    rows = []
    for k, clip in enumerate(clips):
        name = f"{Path(path).stem}_{k:04d}.clip"
        E.write_clip(out / name, clip)
        lo, hi = clip.source
        n_ev = int(np.sum((ev["ts"] >= lo) & (ev["ts"] < hi)))
        rows.append([name, "" if label is None else label, *clip.tensor.shape, n_ev])
    return rows


def cmd_preprocess(args) -> int:
    cfg = load_json(args.config) if args.config else {}
    _check_keys(cfg, BIN_KEYS, "binning config")
    label = cfg.get("label", args.label)
    bcfg = _binning(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=max(args.jobs, 1)) as pool:
        results = list(pool.map(lambda p: _preprocess_one(p, bcfg, label, out), args.inputs))
    with open(out / "manifest.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for rows in results:
            w.writerows(rows)
    print(f"wrote {sum(len(r) for r in results)} clip(s) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg_path = Path(args.config)
    cfg = validate_train_config(load_json(cfg_path), cfg_path.parent)
    spec = spec_from_config(cfg)
    data = dataset_from_config(cfg, cfg_path.parent)
    settings = settings_from_config(cfg, args.seed, args.jobs, args.wall_time)
    out = Path(args.out or cfg.get("out", "run"))
    try:
        _, rows = TR.train(spec, data, settings, out, log=None if args.quiet else print)
    except TR.TrainingAborted as e:
        print(f"error: {e}; last good checkpoint kept at {out / 'last.ckpt'}", file=sys.stderr)
        return EXIT_NUMERIC
    if rows:
        print(f"final val_acc {float(rows[-1][5]):.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    spec, params, meta, _ = TR.load_checkpoint(args.checkpoint)
    cfg_path = Path(args.config)
    cfg = validate_train_config(load_json(cfg_path), cfg_path.parent)
    x, y = dataset_from_config(cfg, cfg_path.parent).split(args.split)
    expect = N.input_shapes(spec)[0].dims
    if tuple(x.shape[1:]) != tuple(expect):
        raise ConfigError(f"dataset sample shape {x.shape[1:]} does not match network input {expect}")
    classes = N.infer_shapes(spec)[-1].dims[-1]
    if y.size and y.max() >= classes:
        raise ConfigError(f"dataset has label {y.max()} but the network has {classes} classes")
    _, acc, pred = TR.evaluate(spec, params, x, y)
    cm = TR.confusion_matrix(y, pred, classes)
    print(f"accuracy {acc:.10g}")
    if args.out:
        with open(args.out, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["true\\pred", *range(classes)])
            for i, row in enumerate(cm):
                w.writerow([i, *row])
    return EXIT_OK


def _sample_input(spec, rng):
    s = spec.input
    if s.tag == "ids":
        vocab = spec.layers[0].vocab
        return rng.integers(0, vocab, size=(1, *s.dims))
    return (rng.random((1, *s.dims)) < 0.5).astype(np.float64)


def cmd_count(args) -> int:
    if args.config:
        cfg = load_json(args.config)
        spec = spec_from_config(cfg)
    elif args.preset:
        spec = N.preset(args.preset)
    else:
        raise ConfigError("count: give a preset name or --config")
    report = C.network_cost(spec)
    print(report.to_table())
    if args.out:
        Path(args.out).write_text(report.to_csv(), newline="\n")
    for kind in args.compare or []:
        if kind not in N.CONV_KINDS:
            raise ConfigError(f"--compare expects one of {N.CONV_KINDS}")
        own = C.network_cost(spec, only=N.CONV_KINDS)
        other = C.spatiotemporal_cost(spec, kind)
        sv = own.savings(other)
        a, b = own.totals, other.totals
        print(f"\nconv layers vs {kind}: MULs {a.muls:.3e} vs {b.muls:.3e}, "
              f"weights {a.weights:.3e} vs {b.weights:.3e} (ratio {b.weights / a.weights:.1f}x); "
              f"savings MUL {C.round_half_up(sv['muls'])}% ADD {C.round_half_up(sv['adds'])}% "
              f"weights {C.round_half_up(sv['weights'])}%")
    if args.verify:
        rng = np.random.default_rng(args.seed or 0)
        params = N.init_params(spec, rng)
        inst = C.instrumented_count(spec, params, _sample_input(spec, rng))
        bad = C.first_mismatch(report, inst)
        if bad is not None:
            a = report.per_layer[bad].cost
            b = inst.per_layer[bad].cost
            print(f"verify: mismatch at layer {bad} ({spec.layers[bad].kind}): "
                  f"analytical {a} vs instrumented {b}", file=sys.stderr)
            return EXIT_MISMATCH
        print("verify: instrumented counts equal the analytical formulas")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="liaf", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)

    pp = sub.add_parser("preprocess", help="bin DVS event files into clip files + manifest.csv")
    pp.add_argument("inputs", nargs="*", help="event files (text format or DVSE binary)")
    pp.add_argument("--config", help="binning JSON (window_us, T, crop, downsample, ...)")
    pp.add_argument("--label", type=int, default=None)
    pp.add_argument("--out", required=True)
    pp.add_argument("--jobs", type=int, default=1)
    pp.set_defaults(fn=cmd_preprocess)

    pt = sub.add_parser("train", help="train a network from a JSON run config")
    pt.add_argument("--config", required=True)
    pt.add_argument("--seed", type=int, default=None)
    pt.add_argument("--jobs", type=int, default=1)
    pt.add_argument("--out", default=None)
    pt.add_argument("--wall-time", action="store_true", help="fill the wall_s metrics column")
    pt.add_argument("--quiet", action="store_true")
    pt.set_defaults(fn=cmd_train)

    pe = sub.add_parser("eval", help="accuracy and confusion matrix of a checkpoint")
    pe.add_argument("checkpoint")
    pe.add_argument("--config", required=True, help="run config naming the dataset")
    pe.add_argument("--split", default="val", choices=("train", "val"))
    pe.add_argument("--out", default=None, help="confusion matrix CSV")
    pe.set_defaults(fn=cmd_eval)

    pc = sub.add_parser("count", help="MUL/ADD/weight report for a network")
    pc.add_argument("preset", nargs="?")
    pc.add_argument("--config", default=None)
    pc.add_argument("--compare", nargs="*", metavar="KIND",
                    help="also cost the conv layers swapped to these kinds")
    pc.add_argument("--verify", action="store_true", help="check against instrumented counting")
    pc.add_argument("--seed", type=int, default=None)
    pc.add_argument("--out", default=None, help="write the per-layer CSV here")
    pc.set_defaults(fn=cmd_count)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (NumericError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, N.SpecError, E.IngestError, ckpt.CheckpointError, OSError, ValueError,
            KeyError, IndexError, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
