"""DVS event streams to polarity-split frame clips.

Events are a structured array with fields ``ts`` (µs), ``x``, ``y``,
``pol`` (+1/-1). Frames are ``(T, H, W, 2)``: channel 0 counts ON events,
channel 1 OFF events. Frame index is ``(ts - ts0) // window_us`` with
``ts0`` the earliest timestamp of the recording.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

EVENT_DTYPE = np.dtype([("ts", "<i8"), ("x", "<i4"), ("y", "<i4"), ("pol", "i1")])
RECORD_DTYPE = np.dtype([("ts", "<u4"), ("x", "<u2"), ("y", "<u2"), ("pol", "i1"), ("reserved", "<u2")])
EVENTS_MAGIC = b"DVSE"
CLIP_MAGIC = b"CLIP"
FORMAT_VERSION = 1


class IngestError(ValueError):
    """Bad event record; ``where`` is a line number (text) or record index."""

    def __init__(self, msg, where=None):
        super().__init__(msg if where is None else f"{msg} (at {where})")
        self.where = where


def make_events(ts, x, y, pol) -> np.ndarray:
    ts = np.asarray(ts)
    ev = np.empty(ts.shape[0], dtype=EVENT_DTYPE)
    ev["ts"], ev["x"], ev["y"], ev["pol"] = ts, x, y, pol
    return ev


@dataclass(frozen=True)
class BinningCfg:
    window_us: int = 5000
    T: int = 10
    crop: object = None          # None | "auto" | ((oy, ox), (h, w))
    crop_size: tuple = (40, 40)  # used by "auto"
    downsample: int = 1
    accumulation: str = "count"  # "count" | "binary"
    sensor: tuple = (128, 128)   # (height, width)
    stride: int | None = None    # frames between clip starts; default T (tiling)
    t0: int | None = None        # binning origin in µs; default the first event

    def __post_init__(self):
        if self.window_us < 1:
            raise ValueError("window_us must be >= 1")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.downsample < 1:
            raise ValueError("downsample must be >= 1")
        if self.accumulation not in ("count", "binary"):
            raise ValueError(f"unknown accumulation {self.accumulation!r}")
        if self.stride is not None and self.stride < 1:
            raise ValueError("stride must be >= 1")


@dataclass
class FrameClip:
    tensor: np.ndarray
    label: int | None = None
    source: tuple = (0, 0)  # (ts_start, ts_end) in µs, end exclusive


def validate_events(events, sensor) -> None:
    H, W = sensor
    bad = (events["x"] < 0) | (events["x"] >= W) | (events["y"] < 0) | (events["y"] >= H)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise IngestError(f"event ({events['x'][i]}, {events['y'][i]}) outside sensor {W}x{H}", i)
    badp = (events["pol"] != 1) & (events["pol"] != -1)
    if badp.any():
        i = int(np.flatnonzero(badp)[0])
        raise IngestError(f"polarity must be +1 or -1, got {events['pol'][i]}", i)
    if (events["ts"] < 0).any():
        i = int(np.flatnonzero(events["ts"] < 0)[0])
        raise IngestError("negative timestamp", i)


def frames_from_events(events, window_us: int, sensor, n_frames: int | None = None, t0=None):
    """Count-accumulate every event into ``(n_frames, H, W, 2)``; also returns ts0."""
    H, W = sensor
    if len(events) == 0:
        return np.zeros((n_frames or 0, H, W, 2)), 0 if t0 is None else t0
    ts0 = int(events["ts"].min()) if t0 is None else int(t0)
    if ts0 > events["ts"].min():
        raise IngestError(f"binning origin {ts0} is after the first event")
    idx = (events["ts"] - ts0) // window_us
    n = int(idx.max()) + 1 if n_frames is None else n_frames
    frames = np.zeros((n, H, W, 2))
    keep = idx < n
    ch = (events["pol"][keep] < 0).astype(np.intp)
    np.add.at(frames, (idx[keep], events["y"][keep], events["x"][keep], ch), 1.0)
    return frames, ts0


def bin_events(events, cfg: BinningCfg, label: int | None = None) -> list:
    """Bin one recording into clips of ``cfg.T`` consecutive frames; trailing partial clip dropped."""
    events = np.asarray(events, dtype=EVENT_DTYPE)
    validate_events(events, cfg.sensor)
    events = events[np.argsort(events["ts"], kind="stable")]
    frames, ts0 = frames_from_events(events, cfg.window_us, cfg.sensor, t0=cfg.t0)
    stride = cfg.stride or cfg.T
    clips = []
    for start in range(0, frames.shape[0] - cfg.T + 1, stride):
        t = frames[start:start + cfg.T].copy()
        src = (ts0 + start * cfg.window_us, ts0 + (start + cfg.T) * cfg.window_us)
        clip = FrameClip(t, label, src)
        if cfg.crop == "auto":
            clip = crop_clip(clip, centroid_origin(clip, cfg.crop_size), cfg.crop_size)
        elif cfg.crop is not None:
            clip = crop_clip(clip, *cfg.crop)
        if cfg.downsample > 1:
            clip = downsample_clip(clip, cfg.downsample)
        if cfg.accumulation == "binary":
            clip.tensor = (clip.tensor > 0).astype(np.float64)
        clips.append(clip)
    return clips


def crop_clip(clip: FrameClip, origin, size) -> FrameClip:
    (oy, ox), (h, w) = origin, size
    _, H, W, _ = clip.tensor.shape
    if oy < 0 or ox < 0 or h < 1 or w < 1 or oy + h > H or ox + w > W:
        raise IngestError(f"crop origin {origin} size {size} outside {H}x{W}")
    return replace(clip, tensor=clip.tensor[:, oy:oy + h, ox:ox + w, :].copy())


def centroid_origin(clip: FrameClip, size) -> tuple:
    """Origin of a ``size`` window centred on the event-count centroid, clamped in bounds."""
    _, H, W, _ = clip.tensor.shape
    h, w = size
    mass = clip.tensor.sum(axis=(0, 3))
    total = mass.sum()
    if total == 0:
        cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    else:
        cy = float((mass.sum(axis=1) * np.arange(H)).sum() / total)
        cx = float((mass.sum(axis=0) * np.arange(W)).sum() / total)
    oy = int(np.floor(cy + 0.5)) - h // 2
    ox = int(np.floor(cx + 0.5)) - w // 2
    return (min(max(oy, 0), H - h), min(max(ox, 0), W - w))


def downsample_clip(clip: FrameClip, k: int) -> FrameClip:
    """Block-sum ``k x k`` pixel groups."""
    T_, H, W, C = clip.tensor.shape
    if k < 1 or H % k or W % k:
        raise IngestError(f"downsample factor {k} does not divide {H}x{W}")
    t = clip.tensor.reshape(T_, H // k, k, W // k, k, C).sum(axis=(2, 4))
    return replace(clip, tensor=t)


def normalize_clip(tensor: np.ndarray) -> np.ndarray:
    m = tensor.max()
    return tensor / m if m > 0 else tensor.copy()


# ---------------------------------------------------------------- file IO


def read_events_text(path) -> np.ndarray:
    rows = []
    with open(path, encoding="ascii") as f:
        for lineno, line in enumerate(f, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split(" ")
            try:
                if len(parts) != 4:
                    raise ValueError
                ts, x, y, pol = (int(p) for p in parts)
            except ValueError:
                raise IngestError(f"{path}: malformed event line {s!r}", f"line {lineno}") from None
            if pol not in (1, -1):
                raise IngestError(f"{path}: polarity must be 1 or -1", f"line {lineno}")
            rows.append((ts, x, y, pol))
    if not rows:
        return np.empty(0, dtype=EVENT_DTYPE)
    a = np.array(rows, dtype=np.int64)
    return make_events(a[:, 0], a[:, 1], a[:, 2], a[:, 3])


def write_events_text(path, events) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as f:
        for e in events:
            f.write(f"{int(e['ts'])} {int(e['x'])} {int(e['y'])} {int(e['pol'])}\n")


def read_events_binary(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != EVENTS_MAGIC:
        raise IngestError(f"{path}: missing DVSE magic", "byte 0")
    if len(data) < 5 or data[4] != FORMAT_VERSION:
        raise IngestError(f"{path}: unsupported version", "byte 4")
    body = data[5:]
    if len(body) % RECORD_DTYPE.itemsize:
        n = len(body) // RECORD_DTYPE.itemsize
        raise IngestError(f"{path}: truncated record", f"record {n}")
    rec = np.frombuffer(body, dtype=RECORD_DTYPE)
    bad = (rec["pol"] != 1) & (rec["pol"] != -1)
    if bad.any():
        raise IngestError(f"{path}: polarity must be 1 or -1", f"record {int(np.flatnonzero(bad)[0])}")
    return make_events(rec["ts"], rec["x"], rec["y"], rec["pol"])


def write_events_binary(path, events) -> None:
    rec = np.zeros(len(events), dtype=RECORD_DTYPE)
    for f in ("ts", "x", "y", "pol"):
        rec[f] = events[f]
    Path(path).write_bytes(EVENTS_MAGIC + bytes([FORMAT_VERSION]) + rec.tobytes())


def read_events(path) -> np.ndarray:
    """Format B when the file starts with the binary magic, else format A."""
    with open(path, "rb") as f:
        head = f.read(4)
    return read_events_binary(path) if head == EVENTS_MAGIC else read_events_text(path)


_CLIP_HEADER = struct.Struct("<4sBHHHHBI")


def write_clip(path, clip: FrameClip) -> None:
    T_, H, W, C = clip.tensor.shape
    label = 0xFFFFFFFF if clip.label is None else int(clip.label)
    head = _CLIP_HEADER.pack(CLIP_MAGIC, FORMAT_VERSION, T_, H, W, C, 0, label)
    Path(path).write_bytes(head + clip.tensor.astype("<f4").tobytes())


def read_clip(path, normalize: bool = False) -> FrameClip:
    data = Path(path).read_bytes()
    if len(data) < _CLIP_HEADER.size:
        raise IngestError(f"{path}: truncated clip header")
    magic, ver, T_, H, W, C, dtype, label = _CLIP_HEADER.unpack_from(data)
    if magic != CLIP_MAGIC or ver != FORMAT_VERSION or dtype != 0:
        raise IngestError(f"{path}: not a version-1 f32 clip file")
    n = T_ * H * W * C
    body = data[_CLIP_HEADER.size:]
    if len(body) != 4 * n:
        raise IngestError(f"{path}: payload has {len(body)} bytes, expected {4 * n}")
    t = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(T_, H, W, C)
    if normalize:
        t = normalize_clip(t)
    return FrameClip(t, None if label == 0xFFFFFFFF else label)
