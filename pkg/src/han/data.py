"""Skeleton sequence ingestion, hand partitioning, sampling, and augmentation.

File formats
------------
Sequence file: UTF-8 text, one frame per line, 3*J whitespace-separated
decimal reals, joint-major (x1 y1 z1 x2 y2 z2 ...).

Manifest file: header lines ``classes=<n>``, ``joints=<22|21>`` and optional
``partition=<name|path>``; then one entry per line,
``path<TAB>label[<TAB>split]`` with split in {train, test} (default train).
Paths are resolved relative to the manifest's directory.

Partition file: 6 lines, each a comma-separated list of joint indices, in
the order thumb, index, middle, ring, pinky, palm group.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ParseError
from .rng import Rng

PART_NAMES = ("thumb", "index", "middle", "ring", "pinky", "palm")


@dataclass(frozen=True)
class HandPartition:
    """Assignment of every joint index to one of 6 hand parts."""

    parts: tuple[tuple[int, ...], ...]
    name: str = "custom"

    def __post_init__(self):
        if len(self.parts) != 6:
            raise ConfigError(f"partition needs exactly 6 parts, got {len(self.parts)}")
        seen: set[int] = set()
        for part in self.parts:
            if not part:
                raise ConfigError("every partition part needs at least one joint")
            for j in part:
                if j < 0:
                    raise ConfigError(f"negative joint index {j} in partition")
                if j in seen:
                    raise ConfigError(f"joint {j} appears in more than one part")
                seen.add(j)
        if seen != set(range(len(seen))):
            missing = sorted(set(range(max(seen) + 1)) - seen)
            raise ConfigError(f"partition does not cover joints {missing}")

    @property
    def joint_count(self) -> int:
        return sum(len(p) for p in self.parts)

    def to_lists(self) -> list[list[int]]:
        return [list(p) for p in self.parts]


# 22 joints: wrist 0, palm 1, then base-to-tip quadruples per finger.
SHREC22 = HandPartition(
    parts=(
        (2, 3, 4, 5),       # thumb
        (6, 7, 8, 9),       # index
        (10, 11, 12, 13),   # middle
        (14, 15, 16, 17),   # ring
        (18, 19, 20, 21),   # pinky
        (0, 1),             # palm group: wrist + palm
    ),
    name="shrec22",
)

# 21 joints: wrist 0, five metacarpals 1-5, then PIP/DIP/TIP triples per finger.
FPHA21 = HandPartition(
    parts=(
        (1, 6, 7, 8),       # thumb
        (2, 9, 10, 11),     # index
        (3, 12, 13, 14),    # middle
        (4, 15, 16, 17),    # ring
        (5, 18, 19, 20),    # pinky
        (0,),               # palm group: wrist only
    ),
    name="fpha21",
)

_BUILTIN_PARTITIONS = {"shrec22": SHREC22, "fpha21": FPHA21}


def partition_by_name(name: str) -> HandPartition:
    if name not in _BUILTIN_PARTITIONS:
        raise ConfigError(f"unknown partition '{name}', expected one of {sorted(_BUILTIN_PARTITIONS)}")
    return _BUILTIN_PARTITIONS[name]


def default_partition(joint_count: int) -> HandPartition:
    if joint_count == 22:
        return SHREC22
    if joint_count == 21:
        return FPHA21
    raise ConfigError(f"no built-in partition for {joint_count} joints; supply a partition file")


def load_partition(path: str) -> HandPartition:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise DataError(f"cannot read partition file {path}: {exc}") from exc
    if len(lines) != 6:
        raise ParseError(f"{path}: partition file needs 6 lines, found {len(lines)}")
    parts = []
    for i, line in enumerate(lines, start=1):
        try:
            parts.append(tuple(int(tok) for tok in line.split(",")))
        except ValueError as exc:
            raise ParseError(f"{path}:{i}: non-integer joint index") from exc
    try:
        return HandPartition(parts=tuple(parts), name=os.path.basename(path))
    except ConfigError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def resolve_partition(name_or_path: str, base_dir: str = ".") -> HandPartition:
    """A partition named in a manifest or config: built-in name or file path."""
    if name_or_path in _BUILTIN_PARTITIONS:
        return _BUILTIN_PARTITIONS[name_or_path]
    path = name_or_path if os.path.isabs(name_or_path) else os.path.join(base_dir, name_or_path)
    if os.path.exists(path):
        return load_partition(path)
    raise ConfigError(f"partition '{name_or_path}' is neither a built-in name nor an existing file")


@dataclass
class SkeletonSequence:
    """T frames of J joints with 3-d coordinates, plus a class label."""

    frames: np.ndarray              # (T, J, 3) float64
    label: int
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[2] != 3 or self.frames.shape[0] < 1:
            raise DataError(f"sequence frames must be (T, J, 3) with T >= 1, got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise DataError("sequence contains non-finite coordinates")

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def joint_count(self) -> int:
        return self.frames.shape[1]


def parse_sequence(path: str, joint_count: int, label: int = 0) -> SkeletonSequence:
    """Read one sequence file; every nonempty line must hold exactly 3*J reals."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw_lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read sequence file {path}: {exc}") from exc
    want = 3 * joint_count
    frames = []
    for lineno, line in enumerate(raw_lines, start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != want:
            raise ParseError(f"{path}:{lineno}: expected {want} values for {joint_count} joints, found {len(tokens)}")
        try:
            values = [float(tok) for tok in tokens]
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: non-numeric token") from exc
        frames.append(np.asarray(values, dtype=np.float64).reshape(joint_count, 3))
    if not frames:
        raise ParseError(f"{path}: no frames found")
    return SkeletonSequence(frames=np.stack(frames), label=label)


def write_sequence(seq: SkeletonSequence, path: str) -> None:
    """Write the sequence file form; values at 9 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        for frame in seq.frames:
            fh.write(" ".join(format(float(v), ".9g") for v in frame.reshape(-1)))
            fh.write("\n")


def uniform_sample(seq: SkeletonSequence, target_frames: int = 8) -> SkeletonSequence:
    """Resample to exactly `target_frames` frames on a uniform time grid.

    For T >= target the grid picks source frames round(k*(T-1)/(target-1));
    shorter sequences are linearly interpolated at the same grid. A sequence
    already at the target length is returned unchanged.
    """
    if target_frames < 1:
        raise ConfigError(f"target_frames must be >= 1, got {target_frames}")
    t = seq.frame_count
    if t == target_frames:
        return seq
    if target_frames == 1:
        return SkeletonSequence(frames=seq.frames[:1].copy(), label=seq.label, metadata=dict(seq.metadata))
    positions = np.arange(target_frames, dtype=np.float64) * (t - 1) / (target_frames - 1)
    if t >= target_frames:
        idx = np.rint(positions).astype(int)
        frames = seq.frames[idx].copy()
    else:
        frames = _interpolate_frames(seq.frames, positions)
    return SkeletonSequence(frames=frames, label=seq.label, metadata=dict(seq.metadata))


def _interpolate_frames(frames: np.ndarray, positions: np.ndarray) -> np.ndarray:
    t = frames.shape[0]
    pos = np.clip(positions, 0.0, t - 1.0)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, t - 1)
    w = (pos - lo)[:, None, None]
    return frames[lo] * (1.0 - w) + frames[hi] * w


@dataclass(frozen=True)
class AugmentationConfig:
    """Per-sequence random transforms applied during training only.

    Magnitudes are conventional defaults and fully overridable; zeroing all
    of them makes augmentation the identity. `time_jitter` is the phase
    shift bound in frames for temporal re-interpolation; 0 disables it.
    """

    scale_range: tuple[float, float] = (0.9, 1.1)
    shift_range: float = 0.05
    time_jitter: float = 0.5
    noise_std: float = 0.001

    def __post_init__(self):
        lo, hi = self.scale_range
        if lo <= 0 or hi <= 0 or hi < lo:
            raise ConfigError(f"scale_range bounds must be positive and ordered, got {self.scale_range}")
        if self.shift_range < 0 or self.time_jitter < 0 or self.noise_std < 0:
            raise ConfigError("augmentation magnitudes must be nonnegative")


def augment(seq: SkeletonSequence, config: AugmentationConfig, rng: Rng) -> SkeletonSequence:
    """Scale, shift, temporally re-interpolate, and perturb one sequence.

    Each transform draws once per sequence from `rng`; frame count, joint
    count and label are preserved.
    """
    frames = seq.frames
    factor = rng.uniform(None, config.scale_range[0], config.scale_range[1])
    frames = frames * factor
    offset = rng.uniform((3,), -config.shift_range, config.shift_range)
    frames = frames + offset
    phase = rng.uniform(None, -config.time_jitter, config.time_jitter)
    if phase != 0.0 and frames.shape[0] > 1:
        positions = np.arange(frames.shape[0], dtype=np.float64) + phase
        frames = _interpolate_frames(frames, positions)
    if config.noise_std > 0.0:
        frames = frames + rng.normal(frames.shape, 0.0, config.noise_std)
    return SkeletonSequence(frames=frames, label=seq.label, metadata=dict(seq.metadata))


def partition_joints(frame: np.ndarray, partition: HandPartition) -> list[np.ndarray]:
    """Split one (J, 3) frame into the 6 parts' coordinate arrays, in part order."""
    frame = np.asarray(frame)
    if frame.ndim != 2 or frame.shape[1] != 3:
        raise ConfigError(f"frame must be (J, 3), got {frame.shape}")
    if frame.shape[0] != partition.joint_count:
        raise ConfigError(
            f"frame has {frame.shape[0]} joints but partition '{partition.name}' covers {partition.joint_count}"
        )
    return [frame[list(part)] for part in partition.parts]


@dataclass
class ManifestEntry:
    path: str
    label: int
    split: str


@dataclass
class Dataset:
    """A parsed manifest: class/joint declarations plus resolvable entries."""

    class_count: int
    joint_count: int
    partition: HandPartition
    entries: list[ManifestEntry]
    base_dir: str = "."

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def load_split(self, split: str) -> list[SkeletonSequence]:
        out = []
        for entry in self.split_entries(split):
            seq = parse_sequence(entry.path, self.joint_count, label=entry.label)
            out.append(seq)
        return out


def load_manifest(path: str) -> Dataset:
    try:
        with open(path, encoding="utf-8") as fh:
            raw_lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    base_dir = os.path.dirname(os.path.abspath(path))
    header: dict[str, str] = {}
    entries: list[ManifestEntry] = []
    for lineno, line in enumerate(raw_lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" in text and "\t" not in text:
            key, _, value = text.partition("=")
            key = key.strip()
            if key not in ("classes", "joints", "partition"):
                raise ParseError(f"{path}:{lineno}: unknown manifest header '{key}'")
            header[key] = value.strip()
            continue
        fields = text.split("\t")
        if len(fields) not in (2, 3):
            raise ParseError(f"{path}:{lineno}: expected path<TAB>label[<TAB>split]")
        split = fields[2].strip() if len(fields) == 3 else "train"
        if split not in ("train", "test"):
            raise ParseError(f"{path}:{lineno}: split must be 'train' or 'test', got '{split}'")
        try:
            label = int(fields[1])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: non-integer label '{fields[1]}'") from exc
        seq_path = fields[0] if os.path.isabs(fields[0]) else os.path.join(base_dir, fields[0])
        entries.append(ManifestEntry(path=seq_path, label=label, split=split))

    for key in ("classes", "joints"):
        if key not in header:
            raise ParseError(f"{path}: manifest is missing the '{key}=' header")
    try:
        class_count = int(header["classes"])
        joint_count = int(header["joints"])
    except ValueError as exc:
        raise ParseError(f"{path}: non-integer manifest header value") from exc
    if class_count < 2:
        raise ParseError(f"{path}: classes must be >= 2, got {class_count}")

    if "partition" in header:
        partition = resolve_partition(header["partition"], base_dir)
    else:
        partition = default_partition(joint_count)
    if partition.joint_count != joint_count:
        raise ParseError(
            f"{path}: partition '{partition.name}' covers {partition.joint_count} joints, manifest declares {joint_count}"
        )

    if not entries:
        raise ParseError(f"{path}: manifest lists no sequences")
    for entry in entries:
        if not 0 <= entry.label < class_count:
            raise ParseError(f"{path}: label {entry.label} out of range for {class_count} classes")
        if not os.path.exists(entry.path):
            raise DataError(f"{path}: referenced sequence file does not exist: {entry.path}")
    return Dataset(
        class_count=class_count,
        joint_count=joint_count,
        partition=partition,
        entries=entries,
        base_dir=base_dir,
    )
