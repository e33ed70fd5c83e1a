"""Domain types, file ingestion, and frame/segment conversions.

File formats owned by this module (all little-endian, all float64):

* Feature file: magic ``CNCF``, u32 version=1, u32 T, u32 D, f64 fps,
  then T*D f64 values in row-major order.
* Annotation file: UTF-8 CSV with exactly one header line ``start,end,label``
  followed by one segment per line (seconds, seconds, integer label).
  One file per video, named ``<video_id>.csv``.
* Task manifest: first line ``task,<task_name>,<K>``, then one line per
  video: ``<video_id>,<feature_file>,<annotation_file_or_dash>``. Paths are
  resolved relative to the manifest's directory.

Everything here is a pure function over immutable inputs; values are safe
to share across threads for reading.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"CNCF"
FEATURE_VERSION = 1

__all__ = [
    "FileFormatError",
    "TruncatedFileError",
    "AnnotationError",
    "FeatureSequence",
    "KeyStepSegment",
    "TaskAnnotation",
    "KeyStepAssignment",
    "TaskManifest",
    "ManifestEntry",
    "load_features",
    "save_features",
    "parse_annotation_file",
    "load_annotations",
    "save_annotation_file",
    "segments_to_frame_labels",
    "load_manifest",
    "save_manifest",
    "load_assignment_file",
    "save_assignment_file",
]


class FileFormatError(ValueError):
    """An artifact file does not conform to its declared format."""


class TruncatedFileError(FileFormatError):
    """An artifact file ends before its declared payload."""


class AnnotationError(ValueError):
    """Annotation content violates task constraints."""


@dataclass(frozen=True)
class FeatureSequence:
    """One video's per-frame feature matrix (T x D float64) plus frame rate."""

    video_id: str
    features: np.ndarray
    fps: float

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise ValueError(
                f"features must be a T x D matrix with T,D >= 1, got shape {feats.shape}"
            )
        if not np.isfinite(feats).all():
            raise ValueError(f"non-finite feature entry in video {self.video_id!r}")
        if not (self.fps > 0):
            raise ValueError(f"fps must be positive, got {self.fps}")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "fps", float(self.fps))

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def duration(self) -> float:
        """Video length in seconds implied by frame count and rate."""
        return self.num_frames / self.fps


@dataclass(frozen=True)
class KeyStepSegment:
    """A ground-truth segment [start_s, end_s) carrying a key-step label."""

    start_s: float
    end_s: float
    label_id: int

    def __post_init__(self):
        # Normalize numpy scalars so serialization sees plain Python types.
        object.__setattr__(self, "start_s", float(self.start_s))
        object.__setattr__(self, "end_s", float(self.end_s))
        object.__setattr__(self, "label_id", int(self.label_id))
        if self.start_s < 0:
            raise AnnotationError(f"segment start {self.start_s} < 0")
        if not (self.start_s < self.end_s):
            raise AnnotationError(
                f"segment start {self.start_s} must precede end {self.end_s}"
            )
        if self.label_id < 1:
            raise AnnotationError(f"label_id {self.label_id} < 1")


@dataclass(frozen=True)
class TaskAnnotation:
    """Ground-truth key-step segments for every video of one task.

    Exposes the per-video summary quantities used by the dataset statistics:
    video count N, key-step count K, unique labels u_n, annotated segment
    count g_n, summed key-step duration t_k^n, and video duration t_v^n.
    """

    task_name: str
    K: int
    per_video: dict[str, list[KeyStepSegment]]
    durations: dict[str, float]

    def __post_init__(self):
        if self.K < 1:
            raise AnnotationError(f"K must be >= 1, got {self.K}")
        for video_id, segments in self.per_video.items():
            if video_id not in self.durations:
                raise AnnotationError(f"no duration for video {video_id!r}")
            duration = self.durations[video_id]
            if not (duration > 0):
                raise AnnotationError(f"duration of {video_id!r} must be positive")
            for seg in segments:
                if seg.label_id > self.K:
                    raise AnnotationError(
                        f"{video_id!r}: label {seg.label_id} exceeds K={self.K}"
                    )
                if seg.end_s > duration + 1e-9:
                    raise AnnotationError(
                        f"{video_id!r}: segment end {seg.end_s} exceeds duration {duration}"
                    )
            ordered = sorted(segments, key=lambda s: s.start_s)
            for prev, cur in zip(ordered, ordered[1:]):
                if cur.start_s < prev.end_s:
                    raise AnnotationError(
                        f"{video_id!r}: segments ({prev.start_s},{prev.end_s}) and "
                        f"({cur.start_s},{cur.end_s}) overlap"
                    )

    @property
    def num_videos(self) -> int:
        return len(self.per_video)

    def unique_labels(self, video_id: str) -> int:
        """u_n: number of distinct key-step labels annotated in one video."""
        return len({seg.label_id for seg in self.per_video[video_id]})

    def segment_count(self, video_id: str) -> int:
        """g_n: number of annotated segments in one video."""
        return len(self.per_video[video_id])

    def keystep_duration(self, video_id: str) -> float:
        """t_k^n: total seconds covered by key-step segments in one video."""
        return sum(seg.end_s - seg.start_s for seg in self.per_video[video_id])

    def video_duration(self, video_id: str) -> float:
        """t_v^n: length of one video in seconds."""
        return self.durations[video_id]


@dataclass(frozen=True)
class KeyStepAssignment:
    """Per-frame labels in {0..K} for every video; 0 is background."""

    per_video: dict[str, np.ndarray]
    K: int

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        coerced = {}
        for video_id, labels in self.per_video.items():
            arr = np.asarray(labels, dtype=np.int64)
            if arr.ndim != 1:
                raise ValueError(f"{video_id!r}: labels must be a 1-d array")
            if arr.size and (arr.min() < 0 or arr.max() > self.K):
                raise ValueError(
                    f"{video_id!r}: labels must lie in 0..{self.K}, "
                    f"got range [{arr.min()}, {arr.max()}]"
                )
            coerced[video_id] = arr
        object.__setattr__(self, "per_video", coerced)


# ---------------------------------------------------------------------------
# Feature files
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sIIId")


def save_features(path: str | Path, sequence: FeatureSequence) -> None:
    """Write a feature file in the binary ``CNCF`` format."""
    T, D = sequence.features.shape
    header = _HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, T, D, sequence.fps)
    payload = np.ascontiguousarray(sequence.features, dtype="<f8").tobytes()
    Path(path).write_bytes(header + payload)


def load_features(path: str | Path, video_id: str | None = None) -> FeatureSequence:
    """Read a feature file, rejecting malformed headers and non-finite data.

    ``video_id`` defaults to the file's stem.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{path}: file shorter than feature header")
    magic, version, T, D, fps = _HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}")
    if T < 1 or D < 1:
        raise FileFormatError(f"{path}: header declares empty matrix ({T} x {D})")
    expected = _HEADER.size + T * D * 8
    if len(raw) < expected:
        raise TruncatedFileError(
            f"{path}: payload holds {len(raw) - _HEADER.size} bytes, expected {T * D * 8}"
        )
    if len(raw) > expected:
        raise FileFormatError(f"{path}: {len(raw) - expected} trailing bytes")
    feats = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(T, D)
    if not np.isfinite(feats).all():
        bad = np.argwhere(~np.isfinite(feats))[0]
        raise ValueError(f"{path}: non-finite value at row {bad[0]}, column {bad[1]}")
    if not (fps > 0) or not np.isfinite(fps):
        raise ValueError(f"{path}: invalid fps {fps}")
    return FeatureSequence(
        video_id=video_id if video_id is not None else path.stem,
        features=feats.astype(np.float64),
        fps=fps,
    )


# ---------------------------------------------------------------------------
# Annotation files
# ---------------------------------------------------------------------------

ANNOTATION_HEADER = "start,end,label"


def parse_annotation_file(
    path: str | Path, duration: float, K: int
) -> list[KeyStepSegment]:
    """Parse and validate one video's annotation CSV.

    Segments must carry labels in 1..K, lie within [0, duration], and be
    pairwise non-overlapping (repeating a label in disjoint segments is fine).
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != ANNOTATION_HEADER:
        raise FileFormatError(f"{path}: missing '{ANNOTATION_HEADER}' header")
    segments: list[KeyStepSegment] = []
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise FileFormatError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
        try:
            start_s, end_s, label_id = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError as exc:
            raise FileFormatError(f"{path}:{lineno}: {exc}") from None
        if label_id > K:
            raise AnnotationError(f"{path}:{lineno}: label {label_id} exceeds K={K}")
        segments.append(KeyStepSegment(start_s, end_s, label_id))
    for seg in segments:
        if seg.end_s > duration + 1e-9:
            raise AnnotationError(
                f"{path}: segment end {seg.end_s} exceeds duration {duration}"
            )
    ordered = sorted(segments, key=lambda s: s.start_s)
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.start_s < prev.end_s:
            raise AnnotationError(
                f"{path}: segments ({prev.start_s},{prev.end_s}) and "
                f"({cur.start_s},{cur.end_s}) overlap"
            )
    return segments


def load_annotations(
    directory: str | Path,
    durations: dict[str, float],
    K: int,
    task_name: str = "task",
) -> TaskAnnotation:
    """Assemble a TaskAnnotation from per-video CSVs named ``<video_id>.csv``."""
    directory = Path(directory)
    per_video = {
        video_id: parse_annotation_file(directory / f"{video_id}.csv", duration, K)
        for video_id, duration in durations.items()
    }
    return TaskAnnotation(task_name=task_name, K=K, per_video=per_video, durations=dict(durations))


def save_annotation_file(path: str | Path, segments: list[KeyStepSegment]) -> None:
    lines = [ANNOTATION_HEADER]
    lines.extend(f"{seg.start_s!r},{seg.end_s!r},{seg.label_id}" for seg in segments)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def segments_to_frame_labels(
    annotation: TaskAnnotation, video_id: str, T: int, fps: float
) -> np.ndarray:
    """Rasterize one video's segments to a length-T frame-label array.

    Frame i takes a segment's label iff its center timestamp (i + 0.5) / fps
    lies in [start_s, end_s); uncovered frames are background (0). Half-open
    ends keep shared boundaries from assigning a frame twice.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (fps > 0):
        raise ValueError(f"fps must be positive, got {fps}")
    labels = np.zeros(T, dtype=np.int64)
    centers = (np.arange(T) + 0.5) / fps
    for seg in annotation.per_video.get(video_id, []):
        inside = (centers >= seg.start_s) & (centers < seg.end_s)
        labels[inside] = seg.label_id
    return labels


# ---------------------------------------------------------------------------
# Task manifests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    video_id: str
    feature_path: Path
    annotation_path: Path | None


@dataclass(frozen=True)
class TaskManifest:
    task_name: str
    K: int
    entries: list[ManifestEntry] = field(default_factory=list)

    def load_feature_sequences(self) -> list[FeatureSequence]:
        return [
            load_features(entry.feature_path, video_id=entry.video_id)
            for entry in self.entries
        ]

    def load_annotation(self) -> TaskAnnotation:
        """Load ground truth for every annotated video; requires all entries annotated."""
        sequences = {
            entry.video_id: load_features(entry.feature_path, video_id=entry.video_id)
            for entry in self.entries
        }
        per_video = {}
        durations = {}
        for entry in self.entries:
            if entry.annotation_path is None:
                raise AnnotationError(
                    f"video {entry.video_id!r} has no annotation file in the manifest"
                )
            duration = sequences[entry.video_id].duration
            per_video[entry.video_id] = parse_annotation_file(
                entry.annotation_path, duration, self.K
            )
            durations[entry.video_id] = duration
        return TaskAnnotation(
            task_name=self.task_name, K=self.K, per_video=per_video, durations=durations
        )


def load_manifest(path: str | Path) -> TaskManifest:
    path = Path(path)
    base = path.parent
    lines = [line.strip() for line in path.read_text(encoding="utf-8").splitlines()]
    lines = [line for line in lines if line]
    if not lines:
        raise FileFormatError(f"{path}: empty manifest")
    head = lines[0].split(",")
    if len(head) != 3 or head[0] != "task":
        raise FileFormatError(f"{path}: first line must be 'task,<task_name>,<K>'")
    try:
        K = int(head[2])
    except ValueError:
        raise FileFormatError(f"{path}: K must be an integer, got {head[2]!r}") from None
    if K < 1:
        raise FileFormatError(f"{path}: K must be >= 1, got {K}")
    entries = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 3:
            raise FileFormatError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
        video_id, feature_file, annotation_file = parts
        entries.append(
            ManifestEntry(
                video_id=video_id,
                feature_path=base / feature_file,
                annotation_path=None if annotation_file == "-" else base / annotation_file,
            )
        )
    if not entries:
        raise FileFormatError(f"{path}: manifest lists no videos")
    return TaskManifest(task_name=head[1], K=K, entries=entries)


def save_manifest(path: str | Path, manifest: TaskManifest) -> None:
    """Write a manifest; stored paths are made relative to the manifest directory."""
    path = Path(path)
    base = path.parent
    lines = [f"task,{manifest.task_name},{manifest.K}"]
    for entry in manifest.entries:
        feature = _relative_to(entry.feature_path, base)
        if entry.annotation_path is None:
            annotation = "-"
        else:
            annotation = _relative_to(entry.annotation_path, base)
        lines.append(f"{entry.video_id},{feature},{annotation}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _relative_to(target: Path, base: Path) -> str:
    try:
        return target.relative_to(base).as_posix()
    except ValueError:
        return target.as_posix()


# ---------------------------------------------------------------------------
# Assignment files
# ---------------------------------------------------------------------------

ASSIGNMENT_HEADER = "frame,label"


def save_assignment_file(path: str | Path, labels: np.ndarray) -> None:
    lines = [ASSIGNMENT_HEADER]
    lines.extend(f"{i},{int(label)}" for i, label in enumerate(labels))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_assignment_file(path: str | Path) -> np.ndarray:
    path = Path(path)
    lines = [line.strip() for line in path.read_text(encoding="utf-8").splitlines()]
    lines = [line for line in lines if line]
    if not lines or lines[0] != ASSIGNMENT_HEADER:
        raise FileFormatError(f"{path}: missing '{ASSIGNMENT_HEADER}' header")
    labels = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 2:
            raise FileFormatError(f"{path}:{lineno}: expected 2 fields")
        try:
            frame, label = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise FileFormatError(f"{path}:{lineno}: {exc}") from None
        if frame != lineno - 2:
            raise FileFormatError(f"{path}:{lineno}: frames must be contiguous from 0")
        labels.append(label)
    return np.asarray(labels, dtype=np.int64)
