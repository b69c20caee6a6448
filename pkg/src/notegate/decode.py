"""Note decoding from framewise onset/offset/activation posteriors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .labels import NoteEvent
from .pitch import F0Contour, hz_to_midi


@dataclass(frozen=True, eq=False)
class FramePosteriors:
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
                raise ValueError(f"{name} posteriors must be 1-D")
            if not np.all(np.isfinite(a)) or np.any(a < 0) or np.any(a > 1):
                raise ValueError(f"{name} posteriors must lie in [0, 1]")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
            arrays.append(a)
        if len({a.size for a in arrays}) != 1:
            raise ValueError("onset/offset/activation lengths differ")

    @property
    def n_frames(self) -> int:
        return self.onset.size

    def as_matrix(self) -> np.ndarray:
        return np.stack([self.onset, self.offset, self.activation], axis=1)

    @classmethod
    def from_matrix(cls, m, hop_seconds: float = 0.020, frame_zero_time: float = 0.0) -> "FramePosteriors":
        m = np.asarray(m, dtype=np.float64)
        if m.ndim != 2 or m.shape[1] != 3:
            raise ValueError(f"expected a T x 3 matrix, got {m.shape}")
        return cls(m[:, 0], m[:, 1], m[:, 2], hop_seconds, frame_zero_time)

    @classmethod
    def from_labels(cls, labels) -> "FramePosteriors":
        return cls(labels.onset, labels.offset, labels.activation,
                   labels.hop_seconds, labels.frame_zero_time)


@dataclass(frozen=True)
class DecodeConfig:
    onset_threshold: float = 0.2
    offset_threshold: float = 0.2
    activation_cutoff: float = 0.5
    unvoiced_fallback: bool = True

    def __post_init__(self):
        for name in ("onset_threshold", "offset_threshold", "activation_cutoff"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")


def pick_onsets(posteriors: FramePosteriors, config: DecodeConfig = DecodeConfig()) -> list[int]:
    """Peak frame of every contiguous run at or above the onset threshold."""
    above = posteriors.onset >= config.onset_threshold
    if not above.any():
        return []
    edges = np.diff(np.concatenate([[0], above.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return [int(s + np.argmax(posteriors.onset[s:e])) for s, e in zip(starts, stops)]


def resolve_offset(posteriors: FramePosteriors, onset_frame: int, next_onset: int,
                   config: DecodeConfig = DecodeConfig()) -> int:
    """Latest of the offset peak and the first activation drop strictly between the onsets.

    Falls back to ``next_onset`` when neither candidate exists.
    """
    if not onset_frame < next_onset:
        raise ValueError(f"onset frame {onset_frame} must precede next onset {next_onset}")
    lo, hi = onset_frame + 1, next_onset
    candidates = []
    if hi > lo:
        seg = posteriors.offset[lo:hi]
        peak = int(np.argmax(seg))
        if seg[peak] >= config.offset_threshold:
            candidates.append(lo + peak)
        drops = np.flatnonzero(posteriors.activation[lo:hi] < config.activation_cutoff)
        if drops.size:
            candidates.append(lo + int(drops[0]))
    return max(candidates) if candidates else next_onset


def decode_frames(posteriors: FramePosteriors, config: DecodeConfig = DecodeConfig()) -> list[tuple[int, int]]:
    """``(onset_frame, offset_frame)`` pairs, zero-length notes dropped."""
    onsets = pick_onsets(posteriors, config)
    last = posteriors.n_frames - 1
    spans = []
    for k, on in enumerate(onsets):
        nxt = onsets[k + 1] if k + 1 < len(onsets) else last
        if nxt <= on:
            continue
        off = resolve_offset(posteriors, on, nxt, config)
        if off > on:
            spans.append((on, off))
    return spans


def _frame_time(p: FramePosteriors, frame: int) -> float:
    return round(p.frame_zero_time + frame * p.hop_seconds, 9)


def decode_notes(posteriors: FramePosteriors, config: DecodeConfig = DecodeConfig()) -> list[NoteEvent]:
    """Unpitched notes, ordered and non-overlapping."""
    return [NoteEvent(_frame_time(posteriors, on), _frame_time(posteriors, off))
            for on, off in decode_frames(posteriors, config)]


def hann_weights(n: int) -> np.ndarray:
    """Hann window of ``n`` points with zero endpoints, normalised to sum 1."""
    if n < 1:
        raise ValueError("segment must contain at least one frame")
    if n == 1:
        return np.ones(1)
    w = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / (n - 1)))
    return w / w.sum() if w.sum() > 0 else np.full(n, 1.0 / n)


def weighted_median(values, weights) -> float:
    """First sorted value whose cumulative normalised weight reaches one half."""
    v = np.asarray(values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if v.size == 0 or v.shape != w.shape:
        raise ValueError("values and weights must be non-empty and equally long")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must have a positive sum")
    order = np.argsort(v, kind="stable")
    cum = np.cumsum(w[order]) / total
    k = int(np.searchsorted(cum, 0.5 - 1e-12, side="left"))
    return float(v[order][min(k, v.size - 1)])


def _segment_median(hz: np.ndarray, mask: np.ndarray, window: np.ndarray) -> float | None:
    if not mask.any():
        return None
    w = window[mask]
    if w.sum() <= 0:
        # only zero-weight endpoint frames are voiced
        w = np.ones(mask.sum())
    return weighted_median(hz_to_midi(hz[mask]), w)


def weighted_median_pitch(f0: F0Contour, onset_frame: int, offset_frame: int,
                          fallback: bool = False) -> float | None:
    """Note pitch (MIDI) over frames ``[onset_frame, offset_frame)``.

    Voiced frames are weighted by a normalised Hann window over the segment.
    With ``fallback`` the unvoiced-candidate F0s are used when no frame is voiced.
    """
    if not offset_frame > onset_frame:
        raise ValueError("offset frame must follow onset frame")
    lo, hi = max(0, onset_frame), min(f0.n_frames, offset_frame)
    if hi <= lo:
        return None
    window = hann_weights(offset_frame - onset_frame)[lo - onset_frame: hi - onset_frame]
    pitch = _segment_median(f0.f0_hz[lo:hi], f0.voiced[lo:hi] & (f0.f0_hz[lo:hi] > 0), window)
    if pitch is None and fallback:
        cand = f0.candidate_hz[lo:hi]
        pitch = _segment_median(cand, cand > 0, window)
    return pitch


def transcribe(posteriors: FramePosteriors, f0: F0Contour,
               config: DecodeConfig = DecodeConfig()) -> list[NoteEvent]:
    """Pitched notes; notes with no usable F0 are left out."""
    if posteriors.n_frames != f0.n_frames or not np.isclose(posteriors.hop_seconds, f0.hop_seconds) \
            or not np.isclose(posteriors.frame_zero_time, f0.frame_zero_time):
        raise ValueError(
            f"frame grid mismatch: posteriors {posteriors.n_frames}@{posteriors.hop_seconds}s, "
            f"F0 {f0.n_frames}@{f0.hop_seconds}s")
    notes = []
    for on, off in decode_frames(posteriors, config):
        pitch = weighted_median_pitch(f0, on, off, fallback=config.unvoiced_fallback)
        if pitch is None:
            continue
        notes.append(NoteEvent(_frame_time(posteriors, on), _frame_time(posteriors, off),
                               float(np.clip(pitch, 0.0, 127.0))))
    return notes
