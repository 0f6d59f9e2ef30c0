"""Feature-sequence storage and normalization.

A feature sequence is a T x D float32 matrix: one row of D visual features per
video frame. Sequences are stored in FSEQ v1, a little-endian binary format:

    bytes 0-3    magic "FSEQ"
    bytes 4-5    format version, u16 (= 1)
    byte  6      payload dtype, u8 (0 = IEEE-754 binary32)
    byte  7      reserved (0)
    bytes 8-11   T, u32
    bytes 12-15  D, u32
    bytes 16-23  reserved (0)
    bytes 24-    T*D float32 values, frame-major

Step annotations and dataset manifests are plain JSON sitting next to the
binary files. Normalization stats are per-feature mean/std fitted on the
pooled frames of the training sequences.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FSEQ_MAGIC = b"FSEQ"
FSEQ_VERSION = 1
FSEQ_DTYPE_F32 = 0
_HEADER = struct.Struct("<4sHBBII8x")  # 24 bytes

DEFAULT_STD_FLOOR = 1e-6

SOURCES = ("extracted", "synthetic")


class FseqError(ValueError):
    """Base error for malformed FSEQ files."""


class FseqBadMagic(FseqError):
    pass


class FseqUnsupportedVersion(FseqError):
    pass


class FseqTruncated(FseqError):
    """Payload size does not match the header (short or overlong file)."""


class FseqNonFinite(FseqError):
    """Payload contains NaN or infinity."""


@dataclass(eq=False)
class FeatureSequence:
    """One demonstration's per-frame features.

    frames is always float32 and C-contiguous, so every in-memory sequence is
    exactly representable in FSEQ v1 and save/load round-trips bit-exactly.
    The array is frozen (writeable=False) after construction. Numeric code
    downstream upcasts to float64 before doing math.

    Equality compares shape and frame bits only; name/source/frame_rate_hz are
    carried for bookkeeping but FSEQ v1 does not persist them.
    """

    frames: np.ndarray
    name: str = ""
    source: str = "extracted"
    frame_rate_hz: float | None = None

    def __post_init__(self):
        a = np.ascontiguousarray(self.frames, dtype=np.float32)
        if a.ndim != 2:
            raise ValueError(f"frames must be 2-D (T, D), got shape {a.shape}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError(f"need T >= 1 and D >= 1, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("frames contain non-finite values")
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")
        if self.frame_rate_hz is not None and not self.frame_rate_hz > 0:
            raise ValueError("frame_rate_hz must be positive when given")
        a.flags.writeable = False
        object.__setattr__(self, "frames", a)

    @property
    def t(self) -> int:
        return self.frames.shape[0]

    @property
    def d(self) -> int:
        return self.frames.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureSequence):
            return NotImplemented
        return (
            self.frames.shape == other.frames.shape
            and self.frames.tobytes() == other.frames.tobytes()
        )


def save_fseq(seq: FeatureSequence, path: str | Path) -> None:
    """Write seq to path in FSEQ v1. Rejects non-finite values before writing."""
    frames = np.ascontiguousarray(seq.frames, dtype="<f4")
    if not np.all(np.isfinite(frames)):
        raise FseqNonFinite("refusing to write non-finite values")
    header = _HEADER.pack(FSEQ_MAGIC, FSEQ_VERSION, FSEQ_DTYPE_F32, 0, seq.t, seq.d)
    with open(path, "wb") as f:
        f.write(header)
        f.write(frames.tobytes(order="C"))


def load_fseq(path: str | Path) -> FeatureSequence:
    """Read an FSEQ v1 file.

    Raises FseqBadMagic, FseqUnsupportedVersion, FseqTruncated, or
    FseqNonFinite; missing files raise FileNotFoundError as usual.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) >= 4 and blob[:4] != FSEQ_MAGIC:
        raise FseqBadMagic(f"{path}: not an FSEQ file (magic {blob[:4]!r})")
    if len(blob) < _HEADER.size:
        raise FseqTruncated(f"{path}: {len(blob)} bytes is shorter than the header")
    magic, version, dtype, _, t, d = _HEADER.unpack_from(blob)
    if magic != FSEQ_MAGIC:
        raise FseqBadMagic(f"{path}: not an FSEQ file (magic {magic!r})")
    if version != FSEQ_VERSION:
        raise FseqUnsupportedVersion(f"{path}: version {version}, expected {FSEQ_VERSION}")
    if dtype != FSEQ_DTYPE_F32:
        raise FseqUnsupportedVersion(f"{path}: payload dtype code {dtype}, expected {FSEQ_DTYPE_F32}")
    if t < 1 or d < 1:
        raise FseqError(f"{path}: empty dimensions T={t} D={d}")
    expected = _HEADER.size + 4 * t * d
    if len(blob) != expected:
        raise FseqTruncated(f"{path}: payload is {len(blob)} bytes, header implies {expected}")
    frames = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(t, d)
    if not np.all(np.isfinite(frames)):
        raise FseqNonFinite(f"{path}: payload contains non-finite values")
    return FeatureSequence(frames=frames.copy(), name=Path(path).stem)


@dataclass(frozen=True)
class StepAnnotation:
    """Ground-truth step boundaries for one sequence.

    n_steps segments with 1-based ids; segment i covers frames
    [boundaries[i-2], boundaries[i-1]) with implicit b_0 = 0 and b_n = T.
    Boundary values must be strictly increasing and lie in [1, T-1]; the upper
    check needs T, so it happens in validate_for_length / segments.
    """

    n_steps: int
    boundaries: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "boundaries", tuple(int(b) for b in self.boundaries))
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if len(self.boundaries) != self.n_steps - 1:
            raise ValueError(
                f"expected {self.n_steps - 1} boundaries for {self.n_steps} steps, "
                f"got {len(self.boundaries)}"
            )
        for a, b in zip(self.boundaries, self.boundaries[1:]):
            if b <= a:
                raise ValueError(f"boundaries must be strictly increasing, got {self.boundaries}")
        if self.boundaries and self.boundaries[0] < 1:
            raise ValueError(f"boundaries must be >= 1, got {self.boundaries}")

    def validate_for_length(self, t: int) -> None:
        if self.boundaries and self.boundaries[-1] > t - 1:
            raise ValueError(f"boundary {self.boundaries[-1]} out of range for T={t}")
        if self.n_steps > t:
            raise ValueError(f"{self.n_steps} steps cannot partition {t} frames")

    def segments(self, t: int) -> list[tuple[int, int]]:
        """Half-open (start, end) frame ranges, one per step, partitioning [0, T)."""
        self.validate_for_length(t)
        edges = (0, *self.boundaries, t)
        return list(zip(edges[:-1], edges[1:]))

    def frame_labels(self, t: int) -> np.ndarray:
        """Length-T array of 1-based step ids."""
        labels = np.empty(t, dtype=np.int64)
        for step, (a, b) in enumerate(self.segments(t), start=1):
            labels[a:b] = step
        return labels


def save_annotation(ann: StepAnnotation, path: str | Path) -> None:
    payload = {"n_steps": ann.n_steps, "boundaries": list(ann.boundaries)}
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")


def load_annotation(path: str | Path) -> StepAnnotation:
    raw = json.loads(Path(path).read_text())
    try:
        return StepAnnotation(n_steps=int(raw["n_steps"]), boundaries=raw["boundaries"])
    except KeyError as e:
        raise ValueError(f"{path}: missing annotation field {e}") from e


@dataclass(frozen=True)
class ManifestEntry:
    fseq: str
    labels: str | None
    split: str

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")


@dataclass(frozen=True)
class DatasetManifest:
    """Index of a dataset: sequence files, optional label files, split tags.

    Stored as a JSON list of {"fseq": ..., "labels": ... | null, "split": ...}
    with paths relative to the manifest's own directory.
    """

    entries: tuple[ManifestEntry, ...]
    root: Path = Path(".")

    def split(self, tag: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == tag]

    def load_entry(self, entry: ManifestEntry) -> tuple[FeatureSequence, StepAnnotation | None]:
        fseq_path = self.root / entry.fseq
        if not fseq_path.exists():
            raise FileNotFoundError(f"manifest refers to missing file: {fseq_path}")
        seq = load_fseq(fseq_path)
        ann = None
        if entry.labels is not None:
            labels_path = self.root / entry.labels
            if not labels_path.exists():
                raise FileNotFoundError(f"manifest refers to missing file: {labels_path}")
            ann = load_annotation(labels_path)
            ann.validate_for_length(seq.t)
        return seq, ann

    def load_split(self, tag: str) -> list[tuple[FeatureSequence, StepAnnotation | None]]:
        pairs = [self.load_entry(e) for e in self.split(tag)]
        dims = {seq.d for seq, _ in pairs}
        if len(dims) > 1:
            raise ValueError(f"sequences in one dataset must share D, got {sorted(dims)}")
        return pairs


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    rows = [{"fseq": e.fseq, "labels": e.labels, "split": e.split} for e in manifest.entries]
    Path(path).write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    rows = json.loads(path.read_text())
    if not isinstance(rows, list):
        raise ValueError(f"{path}: manifest must be a JSON list")
    entries = tuple(
        ManifestEntry(fseq=r["fseq"], labels=r.get("labels"), split=r["split"]) for r in rows
    )
    return DatasetManifest(entries=entries, root=path.parent)


@dataclass(frozen=True)
class NormStats:
    """Per-feature mean and std of the training pool; std is clamped below."""

    mean: np.ndarray
    std: np.ndarray
    std_floor: float = DEFAULT_STD_FLOOR

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.ndim != 1 or std.shape != mean.shape:
            raise ValueError("mean and std must be 1-D arrays of equal length")
        if not self.std_floor > 0:
            raise ValueError("std_floor must be positive")
        if not np.all(std >= self.std_floor):
            raise ValueError("std entries must be >= std_floor")
        mean.flags.writeable = False
        std.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def d(self) -> int:
        return self.mean.shape[0]


def fit_norm(seqs: list[FeatureSequence], std_floor: float = DEFAULT_STD_FLOOR) -> NormStats:
    """Fit per-feature mean and population std on the pooled frames of seqs."""
    if not seqs:
        raise ValueError("fit_norm needs at least one sequence")
    dims = {s.d for s in seqs}
    if len(dims) > 1:
        raise ValueError(f"sequences must share D, got {sorted(dims)}")
    pool = np.concatenate([s.frames for s in seqs]).astype(np.float64)
    mean = pool.mean(axis=0)
    std = pool.std(axis=0)  # population (divide by N)
    return NormStats(mean=mean, std=np.maximum(std, std_floor), std_floor=std_floor)


def apply_norm(seq: FeatureSequence, stats: NormStats) -> FeatureSequence:
    """Return a z-scored copy of seq: (x - mean) / std per feature."""
    if seq.d != stats.d:
        raise ValueError(f"sequence has D={seq.d}, stats have D={stats.d}")
    z = (seq.frames.astype(np.float64) - stats.mean) / stats.std
    return FeatureSequence(
        frames=z, name=seq.name, source=seq.source, frame_rate_hz=seq.frame_rate_hz
    )


def normalize_pool(seqs: list[FeatureSequence], stats: NormStats) -> np.ndarray:
    """Stack the z-scored frames of several sequences into one (N, D) float64 array."""
    return np.concatenate([apply_norm(s, stats).frames.astype(np.float64) for s in seqs])
