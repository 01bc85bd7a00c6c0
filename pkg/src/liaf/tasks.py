"""Synthetic tasks that can only be solved by integrating over time.

MovingBar
    A full-height bar two pixels wide moves horizontally on a 16x16 torus,
    one of four velocities per clip: +1, -1, +3 or -3 bar widths per frame.
    The torus has 8 bar positions and 1 and 3 are coprime with 8, so over
    T=8 frames every clip visits every position exactly once. Any model
    that ignores frame order therefore sees the same bag of frames for all
    four classes. The left bar column emits ON events, the right OFF.

DelayedRecall
    Each of tokens 0..7 appears twice in random order. A CUE token is placed
    right before one of them and the sequence is padded with BLANKs. The
    label is the cued token. Every sequence holds the same multiset of ids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import BinningCfg, bin_events, make_events

BAR_VELOCITIES = (1, -1, 3, -3)
BAR_WIDTH = 2

N_TOKENS = 8
CUE = 8
BLANK = 9


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    classes: int

    def split(self, name):
        if name == "train":
            return self.x_train, self.y_train
        if name in ("test", "val"):
            return self.x_test, self.y_test
        raise ValueError(f"unknown split {name!r}")


def _stratified_split(y, classes, rng, test_frac=0.2):
    train, test = [], []
    for c in range(classes):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(idx.size)]
        n_test = int(round(idx.size * test_frac))
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def _balanced_labels(n, classes):
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return np.arange(n) % classes


# --------------------------------------------------------------- MovingBar


def bar_events(velocity: int, start: int, T: int = 8, size: int = 16, window_us: int = 1000,
               t_offset: int = 0) -> np.ndarray:
    """Events of one bar trajectory; ``start`` and ``velocity`` are in bar widths."""
    cells = size // BAR_WIDTH
    ts, xs, ys, ps = [], [], [], []
    step = window_us // size
    for t in range(T):
        left = ((start + velocity * t) % cells) * BAR_WIDTH
        for y in range(size):
            for dx, pol in ((0, 1), (1, -1)):
                ts.append(t_offset + t * window_us + y * step)
                xs.append(left + dx)
                ys.append(y)
                ps.append(pol)
    return make_events(ts, xs, ys, ps)


def moving_bar(seed: int, n: int, T: int = 8, size: int = 16, window_us: int = 1000) -> Dataset:
    """``n`` clips of shape ``(T, size, size, 2)``, classes balanced, starts stratified."""
    rng = np.random.default_rng(seed)
    classes = len(BAR_VELOCITIES)
    cells = size // BAR_WIDTH
    y = _balanced_labels(n, classes)
    perms = [rng.permutation(cells) for _ in range(classes)]
    offsets = rng.integers(0, 10 ** 6, size=n)
    cfg = BinningCfg(window_us=window_us, T=T, sensor=(size, size))
    x = np.zeros((n, T, size, size, 2))
    for j in range(n):
        c = int(y[j])
        start = int(perms[c][(j // classes) % cells])
        ev = bar_events(BAR_VELOCITIES[c], start, T, size, window_us, int(offsets[j]))
        x[j] = bin_events(ev, cfg)[0].tensor
    tr, te = _stratified_split(y, classes, rng)
    return Dataset(x[tr], y[tr], x[te], y[te], classes)


def shuffle_frames(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Independently permute the time axis of every clip."""
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        out[i] = x[i, rng.permutation(x.shape[1])]
    return out


# ----------------------------------------------------------- DelayedRecall


def recall_sequence(target: int, rng: np.random.Generator, T: int = 20) -> np.ndarray:
    toks = np.repeat(np.arange(N_TOKENS), 2)[rng.permutation(2 * N_TOKENS)]
    where = np.flatnonzero(toks == target)[rng.integers(2)]
    seq = np.concatenate([toks[:where], [CUE], toks[where:]])
    if seq.size > T:
        raise ValueError(f"T={T} too short for {seq.size} tokens")
    return np.concatenate([seq, np.full(T - seq.size, BLANK)]).astype(np.int64)


def delayed_recall(seed: int, n: int, T: int = 20) -> Dataset:
    rng = np.random.default_rng(seed)
    y = _balanced_labels(n, N_TOKENS)
    x = np.stack([recall_sequence(int(c), rng, T) for c in y])
    tr, te = _stratified_split(y, N_TOKENS, rng)
    return Dataset(x[tr], y[tr], x[te], y[te], N_TOKENS)


def write_sequences(path, x, y) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as f:
        for seq, label in zip(x, y):
            f.write(" ".join(str(int(v)) for v in (label, *seq)) + "\n")


def read_sequences(path):
    xs, ys = [], []
    with open(path, encoding="ascii") as f:
        for lineno, line in enumerate(f, 1):
            s = line.split()
            if not s:
                continue
            try:
                vals = [int(v) for v in s]
            except ValueError:
                raise ValueError(f"{path}: non-integer token on line {lineno}") from None
            if len(vals) < 2:
                raise ValueError(f"{path}: line {lineno} has no tokens")
            ys.append(vals[0])
            xs.append(vals[1:])
    if len({len(s) for s in xs}) > 1:
        raise ValueError(f"{path}: sequences have different lengths")
    return np.array(xs, dtype=np.int64).reshape(len(xs), -1), np.array(ys, dtype=np.int64)


TASKS = {"moving_bar": moving_bar, "delayed_recall": delayed_recall}


def generate(task: str, seed: int, n: int, **kw) -> Dataset:
    try:
        fn = TASKS[task]
    except KeyError:
        raise ValueError(f"unknown task {task!r}; choose from {sorted(TASKS)}") from None
    return fn(seed, n, **kw)
