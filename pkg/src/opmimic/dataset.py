"""Episode recording, on-disk formats, chunked train/test splitting, window
extraction, height augmentation, and input normalization.

Episode container (little-endian, version 1):

    magic   4 bytes  b"AOPD"
    version u32
    frames  u32
    rate    f32
    metalen u32
    meta    UTF-8 JSON (mood, seed, oracle version, profile, extras)
    records frames * (time f64, robot 7f32, human 7f32, cmd 10f32,
                      event u8, mode u8)

The format round-trips bit-exactly, which the determinism tests rely on; a
JSON export exists purely for human inspection.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError, ValidationError
from .geometry import PoseTrack, relative_track
from .world import RATE_HZ, BehaviorKind, Mode

MAGIC = b"AOPD"
EPISODE_VERSION = 1
MANIFEST_VERSION = 1

M_PAST = 15
N_FUTURE = 25
DEFAULT_STRIDE = 5

FRAME_DTYPE = np.dtype(
    [
        ("time", "<f8"),
        ("robot", "<f4", (7,)),
        ("human", "<f4", (7,)),
        ("cmd", "<f4", (10,)),
        ("event", "u1"),
        ("mode", "u1"),
    ]
)

_HEADER = struct.Struct("<4sIIfI")


@dataclass
class Episode:
    """One recorded session: mood tag, seed, frame records, provenance."""

    mood: str
    seed: int
    frames: np.ndarray  # structured FRAME_DTYPE
    rate_hz: float = RATE_HZ
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.frames.dtype != FRAME_DTYPE:
            raise ValidationError("frames must use the episode frame dtype")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def times(self) -> np.ndarray:
        return self.frames["time"]

    @property
    def robot(self) -> np.ndarray:
        return self.frames["robot"]

    @property
    def human(self) -> np.ndarray:
        return self.frames["human"]

    @property
    def cmds(self) -> np.ndarray:
        return self.frames["cmd"]

    @property
    def events(self) -> np.ndarray:
        return self.frames["event"]

    @property
    def modes(self) -> np.ndarray:
        return self.frames["mode"]

    def slice(self, start: int, length: int) -> "Episode":
        return replace(self, frames=self.frames[start:start + length])

    def human_track(self) -> PoseTrack:
        h = self.human.astype(np.float64)
        return PoseTrack(h[:, :3], h[:, 3:], self.rate_hz)

    def robot_track(self) -> PoseTrack:
        r = self.robot.astype(np.float64)
        return PoseTrack(r[:, :3], r[:, 3:], self.rate_hz)


def make_frames(n: int) -> np.ndarray:
    return np.zeros(n, dtype=FRAME_DTYPE)


def write_episode(path: str | Path, episode: Episode) -> None:
    meta = dict(episode.metadata)
    meta.setdefault("mood", episode.mood)
    meta.setdefault("seed", episode.seed)
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, EPISODE_VERSION, len(episode.frames),
                             episode.rate_hz, len(meta_bytes)))
        f.write(meta_bytes)
        f.write(episode.frames.tobytes())


def read_episode(path: str | Path) -> Episode:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size or raw[:4] != MAGIC:
        raise DataError(f"{path}: not an episode container")
    magic, version, n_frames, rate, meta_len = _HEADER.unpack_from(raw, 0)
    if version != EPISODE_VERSION:
        raise DataError(f"{path}: unsupported episode version {version}")
    off = _HEADER.size
    meta = json.loads(raw[off:off + meta_len].decode("utf-8"))
    off += meta_len
    expected = n_frames * FRAME_DTYPE.itemsize
    if len(raw) - off != expected:
        raise DataError(f"{path}: truncated episode ({len(raw) - off} != {expected} bytes)")
    frames = np.frombuffer(raw[off:], dtype=FRAME_DTYPE).copy()
    mood = meta.pop("mood", "default")
    seed = int(meta.pop("seed", 0))
    return Episode(mood=mood, seed=seed, frames=frames, rate_hz=float(rate), metadata=meta)


def episode_to_json(episode: Episode) -> dict:
    """Inspection-friendly form; not bit-exact (float32 -> repr)."""
    return {
        "mood": episode.mood,
        "seed": episode.seed,
        "rate_hz": episode.rate_hz,
        "metadata": episode.metadata,
        "n_frames": len(episode),
        "frames": [
            {
                "time": float(f["time"]),
                "robot": [float(x) for x in f["robot"]],
                "human": [float(x) for x in f["human"]],
                "cmd": [float(x) for x in f["cmd"]],
                "event": BehaviorKind(int(f["event"])).name,
                "mode": Mode(int(f["mode"])).name,
            }
            for f in episode.frames
        ],
    }


# ---------------------------------------------------------------------------
# windows


@dataclass
class WindowSample:
    """One training unit: M past frames, N future command frames, one
    behavior label and one mode label for the future window."""

    past_human_rel: np.ndarray  # (M, 7) float32, robot-relative
    past_cmd: np.ndarray  # (M, 10) float32
    future_cmd: np.ndarray  # (N, 10) float32
    behavior_label: int
    mode_label: int

    def __post_init__(self):
        if self.past_human_rel.shape[0] != self.past_cmd.shape[0]:
            raise ValidationError("past pose/command length mismatch")


def window_count(n_frames: int, stride: int, m: int = M_PAST, n: int = N_FUTURE) -> int:
    """Closed form for the number of sliding windows."""
    if n_frames < m + n:
        return 0
    return (n_frames - (m + n)) // stride + 1


def relative_human_array(episode: Episode) -> np.ndarray:
    """(F, 7) robot-relative human poses for every frame, float32."""
    rel = relative_track(episode.robot_track(), episode.human_track())
    return rel.as_array().astype(np.float32)


def _window_labels(events: np.ndarray, modes: np.ndarray) -> tuple[int, int]:
    nz = np.nonzero(events)[0]
    behavior = int(events[nz[0]]) if len(nz) else int(BehaviorKind.NONE)
    standing = int(np.count_nonzero(modes == int(Mode.STANDING)))
    if standing * 2 == len(modes):
        mode = int(modes[0])  # even-length tie: first future frame decides
    else:
        mode = int(Mode.STANDING) if standing * 2 > len(modes) else int(Mode.WALKING)
    return behavior, mode


def extract_windows(
    episode: Episode,
    stride: int = DEFAULT_STRIDE,
    m: int = M_PAST,
    n: int = N_FUTURE,
) -> list[WindowSample]:
    """Sliding windows over one episode (or one chunk slice of an episode).

    The behavior label is the earliest non-NONE event *starting* inside the
    future window; the mode label is the majority mode over the future
    window. Episodes shorter than one window yield an empty list.
    """
    if stride < 1:
        raise ValidationError("stride must be >= 1")
    total = window_count(len(episode), stride, m, n)
    if total == 0:
        return []
    rel = relative_human_array(episode)
    cmds = episode.cmds
    events = episode.events
    modes = episode.modes
    out = []
    for w in range(total):
        s = w * stride
        fut = slice(s + m, s + m + n)
        behavior, mode = _window_labels(events[fut], modes[fut])
        out.append(
            WindowSample(
                past_human_rel=rel[s:s + m].copy(),
                past_cmd=cmds[s:s + m].copy(),
                future_cmd=cmds[fut].copy(),
                behavior_label=behavior,
                mode_label=mode,
            )
        )
    return out


def augment_height(sample: WindowSample, rng: np.random.Generator) -> WindowSample:
    """Shift the whole past human track by one vertical offset ~ U(-0.3, 0.3) m."""
    u = rng.uniform(-0.3, 0.3)
    past = sample.past_human_rel.copy()
    past[:, 2] += np.float32(u)
    return replace(sample, past_human_rel=past)


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class NormStats:
    """Fixed workspace normalization: positions / 5 m, clipped to [-2, 2].

    Recorded per channel so checkpoints stay self-describing even though the
    values are constants rather than fitted statistics.
    """

    pos_mean: tuple = (0.0, 0.0, 0.0)
    pos_scale: tuple = (5.0, 5.0, 5.0)
    pos_clip: float = 2.0

    def normalize_positions(self, rel: np.ndarray) -> np.ndarray:
        """rel: (..., 7); scales the position triplet, passes quaternions."""
        out = np.array(rel, dtype=rel.dtype, copy=True)
        mean = np.asarray(self.pos_mean, dtype=out.dtype)
        scale = np.asarray(self.pos_scale, dtype=out.dtype)
        out[..., :3] = np.clip((out[..., :3] - mean) / scale, -self.pos_clip, self.pos_clip)
        return out

    def to_dict(self) -> dict:
        return {"pos_mean": list(self.pos_mean), "pos_scale": list(self.pos_scale),
                "pos_clip": self.pos_clip}

    @staticmethod
    def from_dict(d: dict) -> "NormStats":
        return NormStats(tuple(d["pos_mean"]), tuple(d["pos_scale"]), float(d["pos_clip"]))


def fit_normalizer(train_windows: list[WindowSample]) -> NormStats:
    if len(train_windows) < 100:
        raise DataError(f"need >= 100 windows to record normalization stats, "
                        f"got {len(train_windows)}")
    return NormStats()


def apply_normalizer(sample: WindowSample, stats: NormStats) -> WindowSample:
    """Normalized copy: relative positions scaled/clipped; commands untouched."""
    return replace(sample, past_human_rel=stats.normalize_positions(sample.past_human_rel))


# ---------------------------------------------------------------------------
# chunked splitting and the manifest


@dataclass(frozen=True)
class ChunkRef:
    episode_path: str
    start: int
    length: int
    split: str  # "train" | "test"


@dataclass
class DatasetManifest:
    chunks: list[ChunkRef]
    stats: NormStats
    seed: int
    fraction: float
    version: int = MANIFEST_VERSION

    def paths(self) -> list[str]:
        return sorted({c.episode_path for c in self.chunks})

    def select(self, split: str) -> list[ChunkRef]:
        return [c for c in self.chunks if c.split == split]


def chunk_episode(n_frames: int, chunk_frames: int, min_tail: int) -> list[tuple[int, int]]:
    """(start, length) 1-min chunks; a short tail is kept only if >= min_tail."""
    spans = []
    start = 0
    while start + chunk_frames <= n_frames:
        spans.append((start, chunk_frames))
        start += chunk_frames
    tail = n_frames - start
    if tail >= min_tail:
        spans.append((start, tail))
    return spans


def split_dataset(
    episode_paths: list[str | Path],
    fraction: float = 0.75,
    seed: int = 0,
    chunk_seconds: float = 60.0,
    min_tail_seconds: float = 30.0,
) -> DatasetManifest:
    """Chunk episodes into 1-min segments, shuffle by seed, assign 75/25.

    Windows are later extracted per chunk, so no window can straddle a
    chunk boundary and the splits share no frames.
    """
    if not 0.0 < fraction < 1.0:
        raise DataError("split fraction must be in (0, 1)")
    chunks: list[tuple[str, int, int]] = []
    for p in episode_paths:
        ep = read_episode(p)
        chunk_frames = int(round(chunk_seconds * ep.rate_hz))
        min_tail = int(round(min_tail_seconds * ep.rate_hz))
        for start, length in chunk_episode(len(ep), chunk_frames, min_tail):
            chunks.append((str(p), start, length))
    if len(chunks) < 2:
        raise DataError(f"need >= 2 one-minute chunks to split, got {len(chunks)}")

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(chunks))
    n_train = int(round(fraction * len(chunks)))
    n_train = max(1, min(len(chunks) - 1, n_train))
    train_idx = set(order[:n_train].tolist())

    refs = [
        ChunkRef(path, start, length, "train" if i in train_idx else "test")
        for i, (path, start, length) in enumerate(chunks)
    ]
    return DatasetManifest(chunks=refs, stats=NormStats(), seed=seed, fraction=fraction)


def write_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    lines = [
        f"manifest_version = {manifest.version}",
        f"seed = {manifest.seed}",
        f"fraction = {manifest.fraction!r}",
        f"norm.pos_mean = {','.join(repr(x) for x in manifest.stats.pos_mean)}",
        f"norm.pos_scale = {','.join(repr(x) for x in manifest.stats.pos_scale)}",
        f"norm.pos_clip = {manifest.stats.pos_clip!r}",
        f"chunks = {len(manifest.chunks)}",
    ]
    for i, c in enumerate(manifest.chunks):
        lines.append(f"chunk.{i} = {c.episode_path}|{c.start}|{c.length}|{c.split}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> DatasetManifest:
    kv: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()
    if "manifest_version" not in kv:
        raise DataError(f"{path}: missing manifest_version")
    version = int(kv["manifest_version"])
    if version != MANIFEST_VERSION:
        raise DataError(f"{path}: unsupported manifest version {version}")
    n = int(kv["chunks"])
    chunks = []
    for i in range(n):
        raw = kv.get(f"chunk.{i}")
        if raw is None:
            raise DataError(f"{path}: missing chunk.{i}")
        ep_path, start, length, split = raw.rsplit("|", 3)
        chunks.append(ChunkRef(ep_path, int(start), int(length), split))
    stats = NormStats(
        tuple(float(x) for x in kv["norm.pos_mean"].split(",")),
        tuple(float(x) for x in kv["norm.pos_scale"].split(",")),
        float(kv["norm.pos_clip"]),
    )
    return DatasetManifest(chunks=chunks, stats=stats, seed=int(kv["seed"]),
                           fraction=float(kv["fraction"]), version=version)


# ---------------------------------------------------------------------------
# training tensors


def windows_for_split(
    manifest: DatasetManifest,
    split: str,
    stride: int = DEFAULT_STRIDE,
    m: int = M_PAST,
    n: int = N_FUTURE,
) -> list[WindowSample]:
    cache: dict[str, Episode] = {}
    out: list[WindowSample] = []
    for ref in manifest.select(split):
        if ref.episode_path not in cache:
            cache[ref.episode_path] = read_episode(ref.episode_path)
        chunk = cache[ref.episode_path].slice(ref.start, ref.length)
        out.extend(extract_windows(chunk, stride=stride, m=m, n=n))
    return out


def stack_windows(windows: list[WindowSample]) -> dict[str, np.ndarray]:
    """Columnar arrays for the trainer: float32 features, int64 labels."""
    if not windows:
        raise DataError("no windows to stack")
    return {
        "past_rel": np.stack([w.past_human_rel for w in windows]).astype(np.float32),
        "past_cmd": np.stack([w.past_cmd for w in windows]).astype(np.float32),
        "future_cmd": np.stack([w.future_cmd for w in windows]).astype(np.float32),
        "behavior": np.array([w.behavior_label for w in windows], dtype=np.int64),
        "mode": np.array([w.mode_label for w in windows], dtype=np.int64),
    }
