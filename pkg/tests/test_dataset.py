import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from opmimic.dataset import (
    DEFAULT_STRIDE,
    Episode,
    FRAME_DTYPE,
    NormStats,
    WindowSample,
    apply_normalizer,
    augment_height,
    chunk_episode,
    episode_to_json,
    extract_windows,
    fit_normalizer,
    make_frames,
    read_episode,
    read_manifest,
    split_dataset,
    stack_windows,
    window_count,
    windows_for_split,
    write_episode,
    write_manifest,
)
from opmimic.errors import DataError
from opmimic.scripted_operator import Mood, sample_session
from opmimic.world import BehaviorKind, Mode


def synthetic_episode(n=200, mood="default", seed=0) -> Episode:
    rng = np.random.default_rng(seed)
    frames = make_frames(n)
    frames["time"] = np.arange(n) * 0.02
    frames["robot"][:, 3] = 1.0  # identity quaternions
    frames["human"][:, 3] = 1.0
    frames["robot"][:, :3] = rng.normal(size=(n, 3)).astype(np.float32)
    frames["human"][:, :3] = rng.normal(size=(n, 3)).astype(np.float32)
    frames["cmd"] = rng.uniform(-1, 1, size=(n, 10)).astype(np.float32)
    frames["mode"] = int(Mode.WALKING)
    return Episode(mood=mood, seed=seed, frames=frames)


@pytest.fixture(scope="module")
def default_session():
    return sample_session(Mood.DEFAULT, 120.0, seed=3)


# ---------------------------------------------------------------------------
# container round-trip


def test_episode_roundtrip_bit_identical(tmp_path, default_session):
    p = tmp_path / "ep.bin"
    write_episode(p, default_session)
    back = read_episode(p)
    assert back.frames.tobytes() == default_session.frames.tobytes()
    assert back.mood == default_session.mood
    assert back.seed == default_session.seed
    assert back.rate_hz == default_session.rate_hz
    assert back.metadata == default_session.metadata


def test_read_rejects_garbage(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(DataError):
        read_episode(p)


def test_truncated_episode_rejected(tmp_path, default_session):
    p = tmp_path / "ep.bin"
    write_episode(p, default_session)
    data = p.read_bytes()
    p.write_bytes(data[:-7])
    with pytest.raises(DataError):
        read_episode(p)


def test_json_export_shape(default_session):
    doc = episode_to_json(default_session.slice(0, 5))
    assert doc["n_frames"] == 5
    assert len(doc["frames"]) == 5
    assert set(doc["frames"][0]) == {"time", "robot", "human", "cmd", "event", "mode"}


# ---------------------------------------------------------------------------
# window extraction


def test_window_count_24000_frames():
    # 24000-frame episode at stride 5: floor((24000-40)/5)+1
    assert window_count(24000, 5) == 4793


def test_extract_windows_matches_closed_form(default_session):
    ws = extract_windows(default_session, stride=5)
    assert len(ws) == window_count(len(default_session), 5)
    w = ws[0]
    assert w.past_human_rel.shape == (15, 7)
    assert w.past_cmd.shape == (15, 10)
    assert w.future_cmd.shape == (25, 10)


@given(length=st.integers(0, 600), stride=st.integers(1, 17))
@settings(max_examples=60, deadline=None)
def test_window_count_formula_by_enumeration(length, stride):
    # oracle: brute-force enumeration of valid window starts
    starts = [s for s in range(0, max(0, length) + 1, stride) if s + 40 <= length]
    assert window_count(length, stride) == len(starts)


def test_extract_count_by_enumeration_on_episode():
    ep = synthetic_episode(n=137)
    for stride in (1, 3, 5, 8):
        expected = len([s for s in range(0, 138, stride) if s + 40 <= 137])
        assert len(extract_windows(ep, stride=stride)) == expected


def test_too_short_episode_yields_empty():
    assert extract_windows(synthetic_episode(n=39)) == []


def test_no_events_means_all_none_labels(default_session):
    ep = synthetic_episode(n=300)
    ws = extract_windows(ep)
    assert all(w.behavior_label == int(BehaviorKind.NONE) for w in ws)


def test_behavior_label_earliest_event_in_future():
    ep = synthetic_episode(n=100)
    # window 0: past frames 0..14, future 15..39
    ep.frames["event"][20] = int(BehaviorKind.DANCE)
    ep.frames["event"][30] = int(BehaviorKind.JUMP)
    ws = extract_windows(ep, stride=100)  # only window 0
    assert len(ws) == 1
    assert ws[0].behavior_label == int(BehaviorKind.DANCE)


def test_event_in_past_does_not_label_window():
    ep = synthetic_episode(n=100)
    ep.frames["event"][5] = int(BehaviorKind.SPIN)
    ws = extract_windows(ep, stride=100)
    assert ws[0].behavior_label == int(BehaviorKind.NONE)


def test_mode_label_majority():
    ep = synthetic_episode(n=100)
    ep.frames["mode"][15:28] = int(Mode.STANDING)  # 13 of 25 future frames
    ws = extract_windows(ep, stride=100)
    assert ws[0].mode_label == int(Mode.STANDING)
    ep.frames["mode"][:] = int(Mode.WALKING)
    ep.frames["mode"][15:27] = int(Mode.STANDING)  # 12 of 25
    ws = extract_windows(ep, stride=100)
    assert ws[0].mode_label == int(Mode.WALKING)


def test_relative_pose_conditioning_is_robot_relative():
    ep = synthetic_episode(n=60)
    # robot at (1, 0), facing +y (yaw 90 deg); human at (1, 2) -> rel (2, 0)
    ep.frames["robot"][:, :3] = np.array([1.0, 0.0, 0.0], dtype=np.float32)
    half = np.sqrt(0.5)
    ep.frames["robot"][:, 3:] = np.array([half, 0, 0, half], dtype=np.float32)
    ep.frames["human"][:, :3] = np.array([1.0, 2.0, 0.0], dtype=np.float32)
    ep.frames["human"][:, 3:] = np.array([1, 0, 0, 0], dtype=np.float32)
    w = extract_windows(ep, stride=100)[0]
    np.testing.assert_allclose(w.past_human_rel[0, :3], [2.0, 0.0, 0.0], atol=1e-5)


# ---------------------------------------------------------------------------
# augmentation


def test_augment_zero_offset_possible_and_xy_untouched():
    ep = synthetic_episode(n=60)
    w = extract_windows(ep, stride=100)[0]

    class ZeroRng:
        def uniform(self, lo, hi):
            return 0.0

    same = augment_height(w, ZeroRng())
    np.testing.assert_array_equal(same.past_human_rel, w.past_human_rel)

    rng = np.random.default_rng(0)
    aug = augment_height(w, rng)
    np.testing.assert_array_equal(aug.past_human_rel[:, :2], w.past_human_rel[:, :2])
    np.testing.assert_array_equal(aug.past_human_rel[:, 3:], w.past_human_rel[:, 3:])
    np.testing.assert_array_equal(aug.past_cmd, w.past_cmd)
    np.testing.assert_array_equal(aug.future_cmd, w.future_cmd)
    # single shared offset across all 15 frames
    dz = aug.past_human_rel[:, 2] - w.past_human_rel[:, 2]
    assert np.all(np.abs(dz - dz[0]) < 1e-6)


def test_augment_offsets_uniform_ks():
    ep = synthetic_episode(n=60)
    w = extract_windows(ep, stride=100)[0]
    rng = np.random.default_rng(1)
    draws = np.array([
        float(augment_height(w, rng).past_human_rel[0, 2] - w.past_human_rel[0, 2])
        for _ in range(100_000)
    ])
    assert draws.min() >= -0.3 and draws.max() <= 0.3
    p = sps.kstest(draws, sps.uniform(loc=-0.3, scale=0.6).cdf).pvalue
    assert p > 0.01


# ---------------------------------------------------------------------------
# normalizer


def test_normalizer_fixed_scale():
    stats = NormStats()
    rel = np.zeros((3, 7), dtype=np.float32)
    rel[:, 3] = 1.0
    rel[0, :3] = [5.0, 0.0, 0.0]
    out = stats.normalize_positions(rel)
    np.testing.assert_allclose(out[0, :3], [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(out[:, 3:], rel[:, 3:])


def test_normalizer_clip_beyond_10m():
    stats = NormStats()
    rel = np.zeros((1, 7), dtype=np.float32)
    rel[0, :3] = [9.9, -9.9, 12.0]
    out = stats.normalize_positions(rel)
    np.testing.assert_allclose(out[0, :3], [1.98, -1.98, 2.0])


def test_fit_normalizer_needs_100_windows():
    ep = synthetic_episode(n=60)
    w = extract_windows(ep, stride=100)
    with pytest.raises(DataError):
        fit_normalizer(w)
    stats = fit_normalizer(w * 100)
    assert stats.pos_scale == (5.0, 5.0, 5.0)


def test_apply_normalizer_commands_untouched():
    ep = synthetic_episode(n=60)
    w = extract_windows(ep, stride=100)[0]
    out = apply_normalizer(w, NormStats())
    np.testing.assert_array_equal(out.past_cmd, w.past_cmd)
    np.testing.assert_array_equal(out.future_cmd, w.future_cmd)


# ---------------------------------------------------------------------------
# split + manifest


@pytest.fixture()
def eight_minute_file(tmp_path):
    ep = sample_session(Mood.DEFAULT, 8 * 60.0, seed=5)
    p = tmp_path / "default.ep"
    write_episode(p, ep)
    return p


def test_split_eight_chunks_6_2(eight_minute_file):
    manifest = split_dataset([eight_minute_file], seed=1)
    assert len(manifest.chunks) == 8
    assert len(manifest.select("train")) == 6
    assert len(manifest.select("test")) == 2


def test_split_deterministic(eight_minute_file):
    a = split_dataset([eight_minute_file], seed=3)
    b = split_dataset([eight_minute_file], seed=3)
    assert a.chunks == b.chunks
    c = split_dataset([eight_minute_file], seed=4)
    assert a.chunks != c.chunks


def test_train_test_share_no_frames(eight_minute_file):
    manifest = split_dataset([eight_minute_file], seed=2)
    frames_of = lambda split: {
        (c.episode_path, i)
        for c in manifest.select(split)
        for i in range(c.start, c.start + c.length)
    }
    assert frames_of("train").isdisjoint(frames_of("test"))
    # exhaustive window-level check: window frame spans never cross splits
    for ref in manifest.chunks:
        n_windows = window_count(ref.length, DEFAULT_STRIDE)
        last_start = (n_windows - 1) * DEFAULT_STRIDE
        assert last_start + 40 <= ref.length


def test_split_too_little_data_rejected(tmp_path):
    ep = sample_session(Mood.DEFAULT, 50.0, seed=0)
    p = tmp_path / "tiny.ep"
    write_episode(p, ep)
    with pytest.raises(DataError):
        split_dataset([p])


def test_chunk_episode_tail_rule():
    assert chunk_episode(24000, 3000, 1500) == [(i * 3000, 3000) for i in range(8)]
    spans = chunk_episode(24000 + 2000, 3000, 1500)  # 40 s tail kept
    assert spans[-1] == (24000, 2000)
    spans = chunk_episode(24000 + 1000, 3000, 1500)  # 20 s tail dropped
    assert spans[-1] == (21000, 3000)


def test_manifest_roundtrip(tmp_path, eight_minute_file):
    manifest = split_dataset([eight_minute_file], seed=9)
    p = tmp_path / "manifest.txt"
    write_manifest(p, manifest)
    back = read_manifest(p)
    assert back.chunks == manifest.chunks
    assert back.stats == manifest.stats
    assert back.seed == manifest.seed
    assert back.fraction == manifest.fraction
    # byte-identical re-serialization
    write_manifest(tmp_path / "manifest2.txt", back)
    assert (tmp_path / "manifest.txt").read_bytes() == (tmp_path / "manifest2.txt").read_bytes()


def test_windows_for_split_and_stack(eight_minute_file):
    manifest = split_dataset([eight_minute_file], seed=1)
    train = windows_for_split(manifest, "train")
    test = windows_for_split(manifest, "test")
    assert len(train) == 6 * window_count(3000, DEFAULT_STRIDE)
    assert len(test) == 2 * window_count(3000, DEFAULT_STRIDE)
    tensors = stack_windows(train)
    assert tensors["past_rel"].shape == (len(train), 15, 7)
    assert tensors["future_cmd"].shape == (len(train), 25, 10)
    assert tensors["behavior"].dtype == np.int64
