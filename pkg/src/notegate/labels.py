"""Note events, framewise targets and triangular label smoothing."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .formats import FormatError, atomic_write_text

NOTE_TSV_HEADER = ("onset_sec", "offset_sec", "pitch_midi")


class OverlapError(ValueError):
    """Two notes in a monophonic sequence overlap in time."""

    def __init__(self, first: "NoteEvent", second: "NoteEvent"):
        self.pair = (first, second)
        super().__init__(
            f"overlapping notes: ({first.onset:.6f}, {first.offset:.6f}) and "
            f"({second.onset:.6f}, {second.offset:.6f})")


@dataclass(frozen=True, order=True)
class NoteEvent:
    onset: float
    offset: float
    pitch: float | None = None

    def __post_init__(self):
        if not self.offset > self.onset:
            raise ValueError(f"note offset {self.offset} must be after onset {self.onset}")
        if self.pitch is not None and not 0.0 <= self.pitch <= 127.0:
            raise ValueError(f"pitch {self.pitch} outside MIDI range [0, 127]")

    @property
    def duration(self) -> float:
        return self.offset - self.onset

    def with_pitch(self, pitch: float | None) -> "NoteEvent":
        return replace(self, pitch=pitch)


@dataclass(frozen=True, eq=False)
class FrameLabels:
    onset: np.ndarray
    offset: np.ndarray
    activation: np.ndarray
    hop_seconds: float = 0.020
    frame_zero_time: float = 0.0

    def __post_init__(self):
        arrays = []
        for name in ("onset", "offset", "activation"):
            a = np.array(getattr(self, name), dtype=np.float64)
            if a.ndim != 1:
                raise ValueError(f"{name} labels must be 1-D")
            if np.any(a < 0) or np.any(a > 1):
                raise ValueError(f"{name} labels must lie in [0, 1]")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
            arrays.append(a)
        if len({a.size for a in arrays}) != 1:
            raise ValueError("onset/offset/activation lengths differ")

    @property
    def n_frames(self) -> int:
        return self.onset.size

    def as_matrix(self) -> np.ndarray:
        """``T x 3`` matrix with columns onset, offset, activation."""
        return np.stack([self.onset, self.offset, self.activation], axis=1)

    @classmethod
    def from_matrix(cls, m, hop_seconds: float = 0.020, frame_zero_time: float = 0.0) -> "FrameLabels":
        m = np.asarray(m, dtype=np.float64)
        if m.ndim != 2 or m.shape[1] != 3:
            raise ValueError(f"expected a T x 3 matrix, got {m.shape}")
        return cls(m[:, 0], m[:, 1], m[:, 2], hop_seconds, frame_zero_time)


def sort_and_check(notes: Iterable[NoteEvent]) -> list[NoteEvent]:
    """Sort by onset and reject overlaps; touching boundaries are fine."""
    ordered = sorted(notes, key=lambda n: (n.onset, n.offset))
    for a, b in zip(ordered, ordered[1:]):
        if a.offset > b.onset:
            raise OverlapError(a, b)
    return ordered


def time_to_frame(t: float, hop: float, frame_zero_time: float = 0.0) -> int:
    """Nearest frame index, halves rounded up."""
    return int(math.floor((t - frame_zero_time) / hop + 0.5))


def notes_to_frames(notes: Sequence[NoteEvent], n_frames: int, hop: float = 0.020,
                    frame_zero_time: float = 0.0) -> FrameLabels:
    """One-hot onset/offset markers plus a binary activation mask.

    Activation covers frames ``onset_frame .. offset_frame - 1``.
    """
    ordered = sort_and_check(notes)
    onset = np.zeros(n_frames)
    offset = np.zeros(n_frames)
    act = np.zeros(n_frames)
    horizon = frame_zero_time + n_frames * hop
    for note in ordered:
        if note.onset < frame_zero_time - 1e-9 or note.offset > horizon + 1e-9:
            raise ValueError(
                f"note ({note.onset}, {note.offset}) outside [{frame_zero_time}, {horizon}]")
        on_f = min(time_to_frame(note.onset, hop, frame_zero_time), n_frames - 1)
        off_f = min(time_to_frame(note.offset, hop, frame_zero_time), n_frames - 1)
        onset[on_f] = 1.0
        offset[off_f] = 1.0
        act[on_f:off_f] = 1.0
    return FrameLabels(onset, offset, act, hop, frame_zero_time)


def triangular_window(n: int) -> np.ndarray:
    """The ``n`` nonzero taps of ``1 - |k| / ((n + 1) / 2)``, centre tap 1.

    Written as ``(h - |k|) / h`` so the taps are the exact quotients (1/3, not 1 - 2/3).
    """
    if isinstance(n, bool) or int(n) != n or n < 1 or n % 2 == 0:
        raise ValueError(f"window scale must be an odd positive integer, got {n}")
    half = (n + 1) / 2
    k = np.arange(-(n // 2), n // 2 + 1)
    return (half - np.abs(k)) / half


def smooth_labels(labels: FrameLabels, n: int = 5) -> FrameLabels:
    """Convolve onset and offset with the triangular window, clip at 1."""
    w = triangular_window(n)
    on = np.minimum(np.convolve(labels.onset, w, mode="same"), 1.0)
    off = np.minimum(np.convolve(labels.offset, w, mode="same"), 1.0)
    return replace(labels, onset=on, offset=off)


def read_notes(path) -> list[NoteEvent]:
    """Read a note TSV (header ``onset_sec offset_sec [pitch_midi]``)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError(f"{path}: empty note file (header required)")
    header = lines[0].strip().split("\t")
    if header[:2] != list(NOTE_TSV_HEADER[:2]):
        expected = "\t".join(NOTE_TSV_HEADER)
        raise FormatError(f"{path}:1: expected header {expected!r}")
    has_pitch = len(header) >= 3 and header[2] == NOTE_TSV_HEADER[2]
    notes = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cols = line.split("\t")
        try:
            onset, offset = float(cols[0]), float(cols[1])
            pitch = None
            if has_pitch and len(cols) > 2 and cols[2].strip() not in ("", "nan", "NaN", "-"):
                pitch = float(cols[2])
            notes.append(NoteEvent(onset, offset, pitch))
        except (ValueError, IndexError) as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    return sorted(notes, key=lambda n: (n.onset, n.offset))


def format_notes(notes: Sequence[NoteEvent]) -> str:
    rows = ["\t".join(NOTE_TSV_HEADER)]
    for n in notes:
        pitch = "" if n.pitch is None else repr(float(n.pitch))
        rows.append(f"{float(n.onset)!r}\t{float(n.offset)!r}\t{pitch}")
    return "\n".join(rows) + "\n"


def write_notes(path, notes: Sequence[NoteEvent]) -> None:
    atomic_write_text(path, format_notes(notes))
