import numpy as np
import pytest

from liaf import events as E

# 12 events on a 4x4 sensor, window 1000 us, T=3. The first event sets the origin (ts0=100).
GOLDEN = [
    (100, 0, 0, 1), (150, 0, 0, 1), (900, 3, 1, -1), (1099, 2, 2, 1),
    (1100, 2, 2, 1), (1500, 1, 3, -1), (1500, 1, 3, 1), (2099, 0, 3, -1),
    (2100, 3, 3, 1), (2200, 3, 3, 1), (3050, 3, 3, 1), (3100, 1, 1, -1),
]
# hand-binned: (frame, y, x, channel) -> count; the last event falls in frame 3 (partial clip, dropped)
GOLDEN_COUNT = {(0, 0, 0, 0): 2, (0, 1, 3, 1): 1, (0, 2, 2, 0): 1,
                (1, 2, 2, 0): 1, (1, 3, 1, 1): 1, (1, 3, 1, 0): 1, (1, 3, 0, 1): 1,
                (2, 3, 3, 0): 3}
CFG = dict(window_us=1000, T=3, sensor=(4, 4))


def golden_events(order=None):
    rows = GOLDEN if order is None else [GOLDEN[i] for i in order]
    a = np.array(rows)
    return E.make_events(a[:, 0], a[:, 1], a[:, 2], a[:, 3])


def expected(binary):
    t = np.zeros((3, 4, 4, 2))
    for k, v in GOLDEN_COUNT.items():
        t[k] = 1 if binary else v
    return t


@pytest.mark.parametrize("fmt", ["text", "binary"])
@pytest.mark.parametrize("acc", ["count", "binary"])
def test_golden_stream(tmp_path, fmt, acc):
    ev = golden_events(order=np.random.default_rng(3).permutation(12))
    path = tmp_path / f"golden.{fmt}"
    (E.write_events_text if fmt == "text" else E.write_events_binary)(path, ev)
    clips = E.bin_events(E.read_events(path), E.BinningCfg(**CFG, accumulation=acc), label=5)
    assert len(clips) == 1
    assert np.array_equal(clips[0].tensor, expected(acc == "binary"))
    assert clips[0].label == 5 and clips[0].source == (100, 3100)


def test_frame_index_examples():
    ev = E.make_events([3000], [0], [0], [1])
    frames, _ = E.frames_from_events(ev, 5000, (1, 1), t0=0)
    assert frames.shape[0] == 1 and frames[0, 0, 0, 0] == 1
    ev = E.make_events([0, 26000], [0, 0], [0, 0], [1, 1])
    frames, _ = E.frames_from_events(ev, 25000, (1, 1), t0=0)
    assert frames[1, 0, 0, 0] == 1


def test_accumulation_modes():
    ev = E.make_events([10, 20], [1, 1], [0, 0], [1, 1])
    for acc, v in (("count", 2), ("binary", 1)):
        clip = E.bin_events(ev, E.BinningCfg(window_us=100, T=1, sensor=(2, 2), accumulation=acc))[0]
        assert clip.tensor[0, 0, 1, 0] == v


def random_stream(rng, n, sensor=(6, 5)):
    return E.make_events(np.sort(rng.integers(0, 20000, n)), rng.integers(0, sensor[1], n),
                         rng.integers(0, sensor[0], n), rng.choice([-1, 1], n))


def test_conservation_polarity_order_on_random_streams():
    rng = np.random.default_rng(0)
    for _ in range(100):
        ev = random_stream(rng, int(rng.integers(1, 200)))
        cfg = E.BinningCfg(window_us=int(rng.integers(100, 3000)), T=int(rng.integers(1, 4)), sensor=(6, 5))
        clips = E.bin_events(ev, cfg)
        covered = (ev["ts"] - ev["ts"].min()) // cfg.window_us < len(clips) * cfg.T
        total = sum(c.tensor.sum() for c in clips)
        assert total == covered.sum()
        assert sum(c.tensor[..., 0].sum() for c in clips) == (covered & (ev["pol"] == 1)).sum()
        assert sum(c.tensor[..., 1].sum() for c in clips) == (covered & (ev["pol"] == -1)).sum()
        shuffled = E.bin_events(ev[rng.permutation(len(ev))], cfg)
        assert all(np.array_equal(a.tensor, b.tensor) for a, b in zip(clips, shuffled))


def test_stride_overlaps_clips():
    ev = E.make_events(np.arange(5) * 1000, [0] * 5, [0] * 5, [1] * 5)
    clips = E.bin_events(ev, E.BinningCfg(window_us=1000, T=3, stride=1, sensor=(1, 1)))
    assert len(clips) == 3
    assert np.array_equal(clips[1].tensor, clips[0].tensor)


def test_out_of_bounds_event_reports_index():
    ev = E.make_events([0, 1, 2], [0, 9, 0], [0, 0, 0], [1, 1, 1])
    with pytest.raises(E.IngestError) as e:
        E.bin_events(ev, E.BinningCfg(sensor=(4, 4)))
    assert e.value.where == 1


def test_crop_examples():
    t = np.zeros((2, 6, 6, 2))
    t[1, 5, 5, 0] = 1
    clip = E.FrameClip(t)
    assert np.array_equal(E.crop_clip(clip, (0, 0), (6, 6)).tensor, t)
    assert not E.crop_clip(clip, (0, 0), (4, 4)).tensor.any()
    with pytest.raises(E.IngestError):
        E.crop_clip(clip, (3, 3), (4, 4))


def test_centroid_crop():
    t = np.zeros((1, 64, 64, 2))
    t[0, 10, 10, 0] = 1
    t[0, 20, 30, 1] = 1
    # centroid (y, x) = (15, 20); an 8x8 window starts 4 before it
    assert E.centroid_origin(E.FrameClip(t), (8, 8)) == (11, 16)
    t = np.zeros((1, 64, 64, 2))
    t[0, 60, 62, 0] = t[0, 62, 62, 0] = 1
    assert E.centroid_origin(E.FrameClip(t), (8, 8)) == (56, 56)


def test_downsample():
    t = np.zeros((1, 2, 2, 2))
    t[0, :, :, 0] = 1
    assert E.downsample_clip(E.FrameClip(t), 2).tensor[0, 0, 0, 0] == 4
    big = np.random.default_rng(0).integers(0, 3, (2, 128, 128, 2)).astype(float)
    d = E.downsample_clip(E.FrameClip(big), 4).tensor
    assert d.shape == (2, 32, 32, 2) and d.sum() == big.sum()
    assert np.array_equal(E.downsample_clip(E.FrameClip(big), 1).tensor, big)
    with pytest.raises(E.IngestError):
        E.downsample_clip(E.FrameClip(big), 3)


def test_binary_applies_after_downsample():
    ev = E.make_events([0, 1], [0, 1], [0, 0], [1, 1])
    clip = E.bin_events(ev, E.BinningCfg(window_us=10, T=1, sensor=(2, 2), downsample=2, accumulation="binary"))[0]
    assert clip.tensor.shape == (1, 1, 1, 2) and clip.tensor[0, 0, 0, 0] == 1


def test_clip_file_roundtrip(tmp_path):
    t = np.random.default_rng(1).integers(0, 5, (3, 4, 5, 2)).astype(float)
    E.write_clip(tmp_path / "a.clip", E.FrameClip(t, 7))
    back = E.read_clip(tmp_path / "a.clip")
    assert np.array_equal(back.tensor, t) and back.label == 7
    raw = (tmp_path / "a.clip").read_bytes()
    assert raw[:5] == b"CLIP\x01" and len(raw) == 18 + 4 * t.size
    E.write_clip(tmp_path / "b.clip", E.FrameClip(t))
    assert E.read_clip(tmp_path / "b.clip").label is None
    assert E.read_clip(tmp_path / "b.clip", normalize=True).tensor.max() == 1.0


def test_binary_record_layout(tmp_path):
    E.write_events_binary(tmp_path / "e.bin", E.make_events([70000], [3], [4], [-1]))
    raw = (tmp_path / "e.bin").read_bytes()
    assert raw == b"DVSE\x01" + (70000).to_bytes(4, "little") + b"\x03\x00\x04\x00\xff\x00\x00"


def test_text_errors_name_the_line(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("# header\n0 1 1 1\n5 1 x 1\n")
    with pytest.raises(E.IngestError, match="line 3"):
        E.read_events(p)
    p.write_text("0 1 1 0\n")
    with pytest.raises(E.IngestError, match="line 1"):
        E.read_events(p)


def test_truncated_binary(tmp_path):
    p = tmp_path / "t.bin"
    p.write_bytes(b"DVSE\x01" + b"\x00" * 15)
    with pytest.raises(E.IngestError, match="record 1"):
        E.read_events(p)


def test_empty_stream():
    assert E.bin_events(E.make_events([], [], [], []), E.BinningCfg()) == []
