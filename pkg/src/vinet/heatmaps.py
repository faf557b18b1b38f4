"""Heatmap sequence data model, on-disk format, and clip preparation.

A sequence file holds one joint-heatmap video: magic ``VIHM``, five
little-endian uint32 header fields (version, J, F, H, W), then the
J×F×H×W volume as little-endian float32 in row-major order. Sample
metadata (subject, view, score, action) lives in a sibling JSON manifest,
one entry per file.

Training never needs whole sequences in memory, so alongside the full
loader there is a clip-level reader that seeks straight to the frames of
one 16-frame clip.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"VIHM"
FORMAT_VERSION = 1
HEADER_BYTES = 24
DEFAULT_CLIP_LEN = 16
DEFAULT_JOINTS = 15
HEAT_MAX = 255.0

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "HEADER_BYTES",
    "DEFAULT_CLIP_LEN",
    "DEFAULT_JOINTS",
    "HEAT_MAX",
    "FormatError",
    "SequenceTooShortError",
    "ActionConfig",
    "MovementSample",
    "HeatmapClip",
    "ManifestEntry",
    "save_sequence",
    "load_sequence",
    "read_header",
    "read_frames",
    "load_clip",
    "clip_count",
    "split_clips",
    "normalize_clip",
    "write_manifest",
    "read_manifest",
]


class FormatError(ValueError):
    """Malformed sequence file; the message names the failing byte offset."""


class SequenceTooShortError(ValueError):
    """Sequence has fewer frames than one clip."""


@dataclass(frozen=True)
class ActionConfig:
    """Scoring setup for one movement type."""

    name: str
    max_score: int
    clip_length: int = DEFAULT_CLIP_LEN

    def __post_init__(self):
        if self.max_score < 1:
            raise ValueError(f"max_score must be >= 1, got {self.max_score}")
        if self.clip_length < 1:
            raise ValueError(f"clip_length must be >= 1, got {self.clip_length}")

    @property
    def num_classes(self) -> int:
        return self.max_score + 1


@dataclass
class MovementSample:
    """One recorded movement: per-joint heatmap video plus labels."""

    heatmaps: np.ndarray  # J×F×H×W, non-negative
    score: int
    subject_id: int
    view_id: int
    action_tag: str = ""
    sample_id: str = ""

    def __post_init__(self):
        if self.heatmaps.ndim != 4:
            raise ValueError(f"heatmaps must be J×F×H×W, got shape {self.heatmaps.shape}")
        if not np.isfinite(self.heatmaps).all():
            raise ValueError("heatmaps contain non-finite values")
        if (self.heatmaps < 0).any():
            raise ValueError("heatmaps contain negative values")
        if self.score < 0:
            raise ValueError(f"score must be >= 0, got {self.score}")

    @property
    def num_joints(self) -> int:
        return self.heatmaps.shape[0]

    @property
    def num_frames(self) -> int:
        return self.heatmaps.shape[1]

    def validate_against(self, config: ActionConfig):
        if self.score > config.max_score:
            raise ValueError(
                f"score {self.score} exceeds max score {config.max_score} "
                f"for action {config.name!r}"
            )
        if self.num_frames < config.clip_length:
            raise SequenceTooShortError(
                f"sequence has {self.num_frames} frames, need >= {config.clip_length}"
            )


@dataclass
class HeatmapClip:
    """A fixed-length temporal slice of one sample, one joint per channel."""

    data: np.ndarray  # J×T×H×W
    source_id: str
    clip_index: int  # 1-based position within the source sequence

    def __post_init__(self):
        if self.data.ndim != 4:
            raise ValueError(f"clip data must be J×T×H×W, got shape {self.data.shape}")
        if self.clip_index < 1:
            raise ValueError(f"clip_index is 1-based, got {self.clip_index}")


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------


def save_sequence(path, heatmaps) -> None:
    """Write a J×F×H×W volume (or a MovementSample's volume) to `path`."""
    if isinstance(heatmaps, MovementSample):
        heatmaps = heatmaps.heatmaps
    heatmaps = np.asarray(heatmaps)
    if heatmaps.ndim != 4:
        raise ValueError(f"expected J×F×H×W volume, got shape {heatmaps.shape}")
    j, f, h, w = heatmaps.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<5I", FORMAT_VERSION, j, f, h, w))
        fh.write(np.ascontiguousarray(heatmaps, dtype="<f4").tobytes())


def _parse_header(raw: bytes, size: int, path) -> tuple:
    if size < HEADER_BYTES:
        raise FormatError(
            f"{path}: truncated header at byte offset {size}: "
            f"need {HEADER_BYTES} header bytes, found {size}"
        )
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r} at byte offset 0, expected {MAGIC!r}")
    version, j, f, h, w = struct.unpack("<5I", raw[4:HEADER_BYTES])
    if version != FORMAT_VERSION:
        raise FormatError(
            f"{path}: unsupported version {version} at byte offset 4, "
            f"expected {FORMAT_VERSION}"
        )
    for name, value, offset in (("J", j, 8), ("F", f, 12), ("H", h, 16), ("W", w, 20)):
        if value == 0:
            raise FormatError(f"{path}: invalid header field {name}=0 at byte offset {offset}")
    expected = j * f * h * w * 4
    actual = size - HEADER_BYTES
    if actual < expected:
        raise FormatError(
            f"{path}: truncated payload at byte offset {HEADER_BYTES + actual}: "
            f"header promises {expected} payload bytes, found {actual}"
        )
    if actual > expected:
        raise FormatError(
            f"{path}: {actual - expected} trailing bytes at byte offset {HEADER_BYTES + expected}"
        )
    return j, f, h, w


def read_header(path) -> tuple:
    """Return (J, F, H, W) after validating header and payload length."""
    path = Path(path)
    size = path.stat().st_size
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_BYTES)
    return _parse_header(raw, size, path)


def load_sequence(path, *, subject_id=0, view_id=0, score=0, action_tag="") -> MovementSample:
    """Read a full sequence file; metadata comes from the keyword arguments."""
    path = Path(path)
    raw = path.read_bytes()
    j, f, h, w = _parse_header(raw, len(raw), path)
    volume = np.frombuffer(raw, dtype="<f4", offset=HEADER_BYTES).reshape(j, f, h, w).copy()
    return MovementSample(
        heatmaps=volume,
        score=score,
        subject_id=subject_id,
        view_id=view_id,
        action_tag=action_tag,
        sample_id=str(path),
    )


def read_frames(path, start: int, count: int) -> np.ndarray:
    """Read frames [start, start+count) of every joint as a J×count×H×W block.

    Seeks per joint, so the cost is the window's worth of bytes rather than
    the whole sequence.
    """
    path = Path(path)
    j, f, h, w = read_header(path)
    if count < 1:
        raise ValueError(f"frame count must be positive, got {count}")
    if not 0 <= start <= f - count:
        raise ValueError(f"{path}: frame window [{start}, {start + count}) outside 0..{f}")
    frame_bytes = h * w * 4
    out = np.empty((j, count, h, w), dtype=np.float32)
    with open(path, "rb") as fh:
        for joint in range(j):
            fh.seek(HEADER_BYTES + (joint * f + start) * frame_bytes)
            block = fh.read(count * frame_bytes)
            out[joint] = np.frombuffer(block, dtype="<f4").reshape(count, h, w)
    return out


def load_clip(path, clip_index: int, clip_length: int = DEFAULT_CLIP_LEN) -> np.ndarray:
    """Read only the frames of one clip (1-based index) as a J×T×H×W float32 block."""
    path = Path(path)
    m = clip_count(read_header(path)[1], clip_length)
    if not 1 <= clip_index <= m:
        raise ValueError(f"{path}: clip index {clip_index} outside 1..{m}")
    return read_frames(path, (clip_index - 1) * clip_length, clip_length)


# ---------------------------------------------------------------------------
# clip preparation
# ---------------------------------------------------------------------------


def clip_count(num_frames: int, clip_length: int = DEFAULT_CLIP_LEN) -> int:
    """Number of non-overlapping clips; trailing frames are dropped."""
    if num_frames < clip_length:
        raise SequenceTooShortError(
            f"sequence has {num_frames} frames, need >= {clip_length} for one clip"
        )
    return num_frames // clip_length


def split_clips(sample: MovementSample, clip_length: int = DEFAULT_CLIP_LEN) -> list:
    """Cut a sample into M = floor(F/T) raw non-overlapping clips."""
    m = clip_count(sample.num_frames, clip_length)
    return [
        HeatmapClip(
            data=sample.heatmaps[:, i * clip_length : (i + 1) * clip_length],
            source_id=sample.sample_id,
            clip_index=i + 1,
        )
        for i in range(m)
    ]


def normalize_clip(block: np.ndarray, granularity: str = "clip") -> np.ndarray:
    """Rescale non-negative values so the maximum maps to 255 and 0 stays 0.

    `granularity` picks the scope of the maximum: "clip" (one scale for the
    whole block, the default), "per_joint", or "per_frame". All-zero scopes
    pass through unchanged.
    """
    block = np.asarray(block, dtype=np.float64)
    if (block < 0).any():
        raise ValueError("normalize_clip: input contains negative values")
    if granularity == "clip":
        peak = block.max() if block.size else 0.0
        return block if peak == 0.0 else block * (HEAT_MAX / peak)
    if granularity == "per_joint":
        peak = block.max(axis=(1, 2, 3), keepdims=True)
    elif granularity == "per_frame":
        peak = block.max(axis=(2, 3), keepdims=True)
    else:
        raise ValueError(f"unknown normalization granularity {granularity!r}")
    scale = np.where(peak == 0.0, 1.0, HEAT_MAX / np.where(peak == 0.0, 1.0, peak))
    return block * scale


# ---------------------------------------------------------------------------
# dataset manifest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    """One dataset row: where a sequence lives and what it is."""

    path: str  # relative to the manifest's directory
    subject_id: int
    view_id: int
    score: int
    action_tag: str

    def resolve(self, root) -> Path:
        return Path(root) / self.path


def write_manifest(path, entries, extra: dict | None = None) -> None:
    """Write the dataset manifest JSON next to the sequence files."""
    doc = {
        "format": "vihm-manifest",
        "version": FORMAT_VERSION,
        "samples": [
            {
                "path": e.path,
                "subject_id": e.subject_id,
                "view_id": e.view_id,
                "score": e.score,
                "action_tag": e.action_tag,
            }
            for e in entries
        ],
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_manifest(path) -> list:
    """Load and validate a dataset manifest; returns ManifestEntry rows."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: manifest is not valid JSON: {e}") from e
    if not isinstance(doc, dict) or "samples" not in doc:
        raise FormatError(f"{path}: manifest missing 'samples' list")
    entries = []
    for i, row in enumerate(doc["samples"]):
        for key in ("path", "subject_id", "view_id", "score", "action_tag"):
            if key not in row:
                raise FormatError(f"{path}: sample {i} missing field {key!r}")
        entries.append(
            ManifestEntry(
                path=row["path"],
                subject_id=int(row["subject_id"]),
                view_id=int(row["view_id"]),
                score=int(row["score"]),
                action_tag=str(row["action_tag"]),
            )
        )
    return entries
