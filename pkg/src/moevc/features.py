"""Feature sequences, file formats, standardization, F0 conversion, codes.

File formats (all little-endian):
  MFCB   magic ``MFCB``, version 0x01, u32 T, u32 D, T*D float32 row-major,
         u32 f0 count (0 or T), then that many float32 values.
  stats  text: line 1 = D, line 2 = D means, line 3 = D stds.
  manifest  text lines ``speaker_id<TAB>split<TAB>relative_path``.
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadDimensionError,
    BadF0Error,
    BadMagicError,
    DataError,
    ShapeError,
    TruncatedPayloadError,
    ZeroVarianceError,
)

MAGIC = b"MFCB"
VERSION = 1


@dataclass
class FeatureSeq:
    """A T x D block of spectral-feature frames plus speaker metadata."""

    frames: np.ndarray
    speaker_id: str = ""
    utterance_id: str = ""
    f0: np.ndarray | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ShapeError(f"frames must be T x D with T >= 1, got {self.frames.shape}")
        if self.f0 is not None:
            self.f0 = np.asarray(self.f0, dtype=np.float32)
            if self.f0.shape != (self.frames.shape[0],):
                raise ShapeError("f0 length must equal frame count")

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def dim(self):
        return self.frames.shape[1]


def write_feature_file(seq, path):
    if not np.all(np.isfinite(seq.frames)):
        raise DataError("refusing to write non-finite frames")
    T, D = seq.frames.shape
    f0 = seq.f0
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION]))
        fh.write(struct.pack("<II", T, D))
        fh.write(seq.frames.astype("<f4", copy=False).tobytes())
        if f0 is None:
            fh.write(struct.pack("<I", 0))
        else:
            fh.write(struct.pack("<I", T))
            fh.write(f0.astype("<f4", copy=False).tobytes())


def read_feature_file(path):
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 13:
        raise TruncatedPayloadError(f"{path}: header truncated")
    if raw[4] != VERSION:
        raise BadMagicError(f"{path}: unsupported version {raw[4]}")
    T, D = struct.unpack_from("<II", raw, 5)
    if T == 0 or D == 0:
        raise BadDimensionError(f"{path}: zero dimension (T={T}, D={D})")
    off = 13
    need = T * D * 4
    if len(raw) < off + need + 4:
        raise TruncatedPayloadError(f"{path}: payload truncated")
    frames = np.frombuffer(raw, dtype="<f4", count=T * D, offset=off).reshape(T, D)
    off += need
    (f0_count,) = struct.unpack_from("<I", raw, off)
    off += 4
    if f0_count not in (0, T):
        raise BadDimensionError(f"{path}: f0 count {f0_count} not 0 or {T}")
    f0 = None
    if f0_count:
        if len(raw) < off + f0_count * 4:
            raise TruncatedPayloadError(f"{path}: f0 payload truncated")
        f0 = np.frombuffer(raw, dtype="<f4", count=f0_count, offset=off).copy()
    name = Path(path).stem
    return FeatureSeq(frames=frames.copy(), utterance_id=name, f0=f0)


@dataclass
class StandardizationStats:
    """Per-dimension mean and (population) standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ShapeError("mean/std must be matching 1-D vectors")
        if np.any(self.std <= 0):
            raise ZeroVarianceError(int(np.argmax(self.std <= 0)))


def compute_stats(seqs):
    """Population mean/std over all frames of the given training sequences."""
    frames = np.concatenate([s.frames for s in seqs], axis=0).astype(np.float64)
    mean = frames.mean(axis=0)
    var = ((frames - mean) ** 2).mean(axis=0)
    zero = np.flatnonzero(var == 0)
    if zero.size:
        raise ZeroVarianceError(int(zero[0]))
    return StandardizationStats(mean=mean, std=np.sqrt(var))


def standardize(frames, stats):
    d = np.asarray(frames)
    return ((d - stats.mean) / stats.std).astype(d.dtype, copy=False)


def destandardize(frames, stats):
    d = np.asarray(frames)
    return (d * stats.std + stats.mean).astype(d.dtype, copy=False)


def write_stats_file(stats, path):
    lines = [
        str(stats.mean.size),
        " ".join(repr(float(v)) for v in stats.mean),
        " ".join(repr(float(v)) for v in stats.std),
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_stats_file(path):
    lines = Path(path).read_text().splitlines()
    if len(lines) < 3:
        raise TruncatedPayloadError(f"{path}: expected 3 lines")
    try:
        d = int(lines[0])
        mean = np.array([float(v) for v in lines[1].split()], dtype=np.float64)
        std = np.array([float(v) for v in lines[2].split()], dtype=np.float64)
    except ValueError as e:
        raise DataError(f"{path}: unparseable stats: {e}") from None
    if d == 0:
        raise BadDimensionError(f"{path}: zero dimension")
    if mean.size != d or std.size != d:
        raise TruncatedPayloadError(f"{path}: expected {d} values per line")
    return StandardizationStats(mean=mean, std=std)


@dataclass
class F0Stats:
    """Log-domain mean/std of F0 over voiced frames."""

    log_mean: float
    log_std: float

    def __post_init__(self):
        if not (self.log_std > 0):
            raise BadF0Error(f"log_std must be > 0, got {self.log_std}")


def f0_stats_from_track(f0):
    f0 = np.asarray(f0, dtype=np.float64)
    if np.any(f0 < 0):
        raise BadF0Error("negative f0 value")
    voiced = f0[f0 > 0]
    if voiced.size < 2:
        raise BadF0Error("need at least 2 voiced frames for stats")
    logs = np.log(voiced)
    return F0Stats(log_mean=float(logs.mean()), log_std=float(logs.std()))


def f0_convert(f0, src, tgt):
    """Linear mean-variance transform of log-F0; unvoiced (0) passes through."""
    f0 = np.asarray(f0, dtype=np.float64)
    if np.any(f0 < 0):
        raise BadF0Error("negative f0 value")
    out = f0.copy()
    voiced = f0 > 0
    logs = np.log(f0[voiced])
    out[voiced] = np.exp(
        (logs - src.log_mean) / src.log_std * tgt.log_std + tgt.log_mean
    )
    return out


def write_f0_stats_file(stats, path):
    Path(path).write_text(f"{stats.log_mean!r} {stats.log_std!r}\n")


def read_f0_stats_file(path):
    parts = Path(path).read_text().split()
    if len(parts) != 2:
        raise DataError(f"{path}: expected 'log_mean log_std'")
    return F0Stats(log_mean=float(parts[0]), log_std=float(parts[1]))


def one_hot(index, n_speakers):
    """One-hot speaker code as a float32 vector of length S."""
    if not 0 <= index < n_speakers:
        raise ShapeError(f"speaker index {index} out of range for {n_speakers}")
    code = np.zeros(n_speakers, dtype=np.float32)
    code[index] = 1.0
    return code


def tile_code(code, q, n):
    """Tile an S-vector into an S x Q x N block (constant over positions)."""
    code = np.asarray(code)
    return np.broadcast_to(code[:, None, None], (code.size, q, n)).copy()


def sample_training_segment(frames, length, rng):
    """A contiguous window of ``length`` frames at a uniform random offset.

    Sequences shorter than ``length`` are cyclically extended first.
    """
    frames = np.asarray(frames)
    T = frames.shape[0]
    if T < length:
        reps = -(-length // T)
        frames = np.concatenate([frames] * reps, axis=0)[:length]
        T = length
    offset = int(rng.integers(0, T - length + 1))
    return frames[offset : offset + length].copy()


@dataclass
class ManifestEntry:
    speaker_id: str
    split: str
    path: str


@dataclass
class CorpusManifest:
    """Speaker roster plus per-utterance file listing with train/eval split."""

    root: Path
    entries: list[ManifestEntry] = field(default_factory=list)

    @property
    def speakers(self):
        seen = []
        for e in self.entries:
            if e.speaker_id not in seen:
                seen.append(e.speaker_id)
        return seen

    def select(self, split=None, speaker=None):
        return [
            e
            for e in self.entries
            if (split is None or e.split == split)
            and (speaker is None or e.speaker_id == speaker)
        ]

    def load(self, entry):
        seq = read_feature_file(self.root / entry.path)
        seq.speaker_id = entry.speaker_id
        return seq

    def validate(self):
        if not self.entries:
            raise DataError("manifest lists no utterances")
        for spk in self.speakers:
            if not self.select(split="train", speaker=spk):
                raise DataError(f"speaker {spk} has no train utterance")
        for e in self.entries:
            if not (self.root / e.path).exists():
                raise DataError(f"missing feature file {e.path}")


def write_manifest(manifest, path):
    lines = [f"{e.speaker_id}\t{e.split}\t{e.path}" for e in manifest.entries]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path):
    path = Path(path)
    entries = []
    for i, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path} line {i}: expected 3 tab-separated fields")
        if parts[1] not in ("train", "eval"):
            raise DataError(f"{path} line {i}: bad split {parts[1]!r}")
        entries.append(ManifestEntry(parts[0], parts[1], parts[2]))
    return CorpusManifest(root=path.parent, entries=entries)
