"""Probabilistic YIN (pYIN) F0 tracking on the mel frame grid.

Frame ``i`` is centred at ``i * hop / sr``, exactly like the mel frames, so a
contour can be indexed with the same frame numbers the decoder produces.

Per frame the cumulative-mean-normalised difference function (CMNDF) is
scanned with 100 thresholds weighted by a Beta(2, 18) prior; each threshold
votes for the first trough below it. The votes become emissions of an HMM
whose states are 20-cent pitch bins plus one unvoiced state, decoded with
Viterbi.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import beta as beta_dist

from .features import AudioClip
from .formats import FormatError, atomic_write_text

C2_HZ = 440.0 * 2.0 ** (-33 / 12)
C6_HZ = 440.0 * 2.0 ** (15 / 12)


@dataclass(frozen=True)
class PitchConfig:
    sample_rate: int = 16000
    hop_length: int = 320
    f_min: float = C2_HZ
    f_max: float = C6_HZ
    window_seconds: float = 0.025
    n_thresholds: int = 100
    beta_a: float = 2.0
    beta_b: float = 18.0
    absolute_min_prob: float = 0.01
    bins_per_semitone: int = 5
    max_transition_octaves_per_second: float = 35.92
    switch_prob: float = 0.01
    silence_rms: float = 1e-5

    def __post_init__(self):
        if not 0 < self.f_min < self.f_max:
            raise ValueError(f"need 0 < f_min < f_max, got {self.f_min}, {self.f_max}")
        if self.f_max >= self.sample_rate / 2:
            raise ValueError("f_max must be below Nyquist")

    @property
    def hop_seconds(self) -> float:
        return self.hop_length / self.sample_rate

    @property
    def window_length(self) -> int:
        return int(round(self.window_seconds * self.sample_rate))


@dataclass(frozen=True, eq=False)
class F0Contour:
    """Framewise F0. ``candidate_hz`` keeps the best YIN candidate even when unvoiced."""

    f0_hz: np.ndarray
    voiced: np.ndarray
    voicing_prob: np.ndarray
    candidate_hz: np.ndarray
    hop_seconds: float = 0.020
    frame_zero_time: float = 0.0

    def __post_init__(self):
        f0 = np.array(self.f0_hz, dtype=np.float64)
        voiced = np.array(self.voiced, dtype=bool)
        prob = np.array(self.voicing_prob, dtype=np.float64)
        cand = np.array(self.candidate_hz, dtype=np.float64)
        if not (f0.shape == voiced.shape == prob.shape == cand.shape) or f0.ndim != 1:
            raise ValueError("F0 contour fields must be 1-D and equally long")
        if np.any(f0 < 0) or np.any(cand < 0):
            raise ValueError("F0 values must be non-negative")
        if np.any(f0[voiced] <= 0):
            raise ValueError("voiced frames need a positive F0")
        if np.any(prob < 0) or np.any(prob > 1):
            raise ValueError("voicing probabilities must lie in [0, 1]")
        f0 = np.where(voiced, f0, 0.0)
        for name, arr in (("f0_hz", f0), ("voiced", voiced), ("voicing_prob", prob), ("candidate_hz", cand)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_frames(self) -> int:
        return self.f0_hz.size


def hz_to_midi(f):
    return 69.0 + 12.0 * np.log2(np.asarray(f, dtype=np.float64) / 440.0)


def midi_to_hz(m):
    return 440.0 * 2.0 ** ((np.asarray(m, dtype=np.float64) - 69.0) / 12.0)


def _frames(samples: np.ndarray, frame_length: int, hop: int) -> np.ndarray:
    n_frames = samples.size // hop + 1
    pad = frame_length // 2
    x = np.pad(samples, (pad, pad + frame_length))
    idx = np.arange(frame_length)[None, :] + hop * np.arange(n_frames)[:, None]
    return x[idx]


def cmnd(frames: np.ndarray, window: int, tau_max: int) -> np.ndarray:
    """Cumulative-mean-normalised difference for lags ``0..tau_max``, one row per frame."""
    n = frames.shape[1]
    nfft = 1 << int(np.ceil(np.log2(n + window)))
    head = np.zeros_like(frames)
    head[:, :window] = frames[:, :window]
    spec = np.fft.rfft(frames, nfft) * np.conj(np.fft.rfft(head, nfft))
    cross = np.fft.irfft(spec, nfft)[:, : tau_max + 1]

    sq = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(frames ** 2, axis=1)], axis=1)
    lags = np.arange(tau_max + 1)
    energy_lag = sq[:, lags + window] - sq[:, lags]
    diff = np.maximum(energy_lag[:, :1] + energy_lag - 2.0 * cross, 0.0)

    out = np.ones_like(diff)
    csum = np.cumsum(diff[:, 1:], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = diff[:, 1:] * lags[1:] / csum
    out[:, 1:] = np.where(csum > 0, ratio, 1.0)
    return out


def _parabolic(d: np.ndarray, tau: int) -> float:
    if tau <= 0 or tau >= d.size - 1:
        return float(tau)
    a, b, c = d[tau - 1], d[tau], d[tau + 1]
    denom = a - 2.0 * b + c
    if denom <= 0:
        return float(tau)
    return tau + 0.5 * (a - c) / denom


def _threshold_weights(cfg: PitchConfig) -> tuple[np.ndarray, np.ndarray]:
    edges = np.linspace(0.0, 1.0, cfg.n_thresholds + 1)
    cdf = beta_dist.cdf(edges, cfg.beta_a, cfg.beta_b)
    return edges[1:], np.diff(cdf)


def frame_candidates(d: np.ndarray, tau_min: int, tau_max: int, thresholds, weights,
                     absolute_min_prob: float = 0.01):
    """Trough lags of one CMNDF row and their threshold-vote probabilities.

    Threshold mass with no trough below it goes to the deepest trough,
    scaled by ``absolute_min_prob``.
    """
    seg = d[tau_min: tau_max + 1]
    empty = np.empty(0, dtype=np.int64), np.empty(0)
    if seg.size < 3:
        return empty
    troughs = np.flatnonzero((seg[1:-1] < seg[:-2]) & (seg[1:-1] <= seg[2:])) + 1
    if troughs.size == 0:
        return empty
    values = seg[troughs]
    probs = np.zeros(troughs.size)
    below = values[None, :] < thresholds[:, None]
    has = below.any(axis=1)
    first = np.argmax(below, axis=1)
    np.add.at(probs, first[has], weights[has])
    probs[np.argmin(values)] += absolute_min_prob * weights[~has].sum()
    keep = probs > 0
    return troughs[keep] + tau_min, probs[keep]


def _analyse(samples: np.ndarray, cfg: PitchConfig):
    window = cfg.window_length
    tau_min = max(2, int(np.floor(cfg.sample_rate / cfg.f_max)))
    tau_max = int(np.ceil(cfg.sample_rate / cfg.f_min)) + 1
    frames = _frames(samples, window + tau_max + 1, cfg.hop_length)
    d = cmnd(frames, window, tau_max)
    rms = np.sqrt(np.mean(frames[:, :window] ** 2, axis=1))
    thresholds, weights = _threshold_weights(cfg)

    per_frame = []
    for t in range(frames.shape[0]):
        if rms[t] < cfg.silence_rms:
            per_frame.append((np.empty(0), np.empty(0)))
            continue
        taus, probs = frame_candidates(d[t], tau_min, tau_max, thresholds, weights,
                                       cfg.absolute_min_prob)
        periods = np.array([_parabolic(d[t], int(k)) for k in taus])
        freqs = np.clip(cfg.sample_rate / periods, cfg.f_min, cfg.f_max) if taus.size else np.empty(0)
        per_frame.append((freqs, probs))
    return per_frame


def _transition_log(n_bins: int, max_step: int, switch: float) -> np.ndarray:
    offsets = np.arange(n_bins)[:, None] - np.arange(n_bins)[None, :]
    tri = np.maximum(0.0, max_step + 1 - np.abs(offsets))
    tri /= tri.sum(axis=1, keepdims=True)
    trans = np.zeros((n_bins + 1, n_bins + 1))
    trans[:n_bins, :n_bins] = (1.0 - switch) * tri
    trans[:n_bins, n_bins] = switch
    trans[n_bins, :n_bins] = switch / n_bins
    trans[n_bins, n_bins] = 1.0 - switch
    with np.errstate(divide="ignore"):
        return np.log(trans)


def viterbi(log_obs: np.ndarray, log_trans: np.ndarray, log_init: np.ndarray) -> np.ndarray:
    """Most likely state path; ties resolve to the lowest state index."""
    T, S = log_obs.shape
    back = np.zeros((T, S), dtype=np.int64)
    score = log_init + log_obs[0]
    for t in range(1, T):
        cand = score[:, None] + log_trans
        back[t] = np.argmax(cand, axis=0)
        score = cand[back[t], np.arange(S)] + log_obs[t]
    path = np.empty(T, dtype=np.int64)
    path[-1] = int(np.argmax(score))
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def track_f0(clip: AudioClip, config: PitchConfig = PitchConfig()) -> F0Contour:
    """pYIN F0 of ``clip`` on the ``hop_length`` frame grid."""
    cfg = config
    if clip.sample_rate != cfg.sample_rate:
        raise ValueError(f"clip is at {clip.sample_rate} Hz, tracker expects {cfg.sample_rate} Hz")
    if clip.samples.size < cfg.window_length:
        raise ValueError(
            f"clip of {clip.samples.size} samples is shorter than the {cfg.window_length}-sample window")

    per_frame = _analyse(clip.samples, cfg)
    T = len(per_frame)
    bins_per_octave = 12 * cfg.bins_per_semitone
    n_bins = int(round(bins_per_octave * np.log2(cfg.f_max / cfg.f_min))) + 1
    bin_hz = cfg.f_min * 2.0 ** (np.arange(n_bins) / bins_per_octave)

    obs = np.zeros((T, n_bins + 1))
    voicing = np.zeros(T)
    best = np.zeros(T)
    for t, (freqs, probs) in enumerate(per_frame):
        if freqs.size == 0:
            obs[t, n_bins] = 1.0
            continue
        b = np.clip(np.round(bins_per_octave * np.log2(freqs / cfg.f_min)).astype(int), 0, n_bins - 1)
        np.add.at(obs[t], b, probs)
        voicing[t] = min(1.0, probs.sum())
        obs[t, n_bins] = 1.0 - voicing[t]
        best[t] = freqs[np.argmax(probs)]

    max_step = int(round(cfg.max_transition_octaves_per_second * cfg.hop_seconds * bins_per_octave))
    log_trans = _transition_log(n_bins, max_step, cfg.switch_prob)
    log_init = np.log(np.concatenate([np.full(n_bins, 0.5 / n_bins), [0.5]]))
    with np.errstate(divide="ignore"):
        log_obs = np.log(obs)
    path = viterbi(log_obs, log_trans, log_init)

    voiced = path < n_bins
    f0 = np.zeros(T)
    for t in np.flatnonzero(voiced):
        state_hz = bin_hz[path[t]]
        freqs = per_frame[t][0]
        # report the exact candidate behind the chosen bin instead of the bin centre
        if freqs.size:
            cents = np.abs(1200.0 * np.log2(freqs / state_hz))
            k = int(np.argmin(cents))
            f0[t] = freqs[k] if cents[k] <= 100.0 / cfg.bins_per_semitone else state_hz
        else:
            f0[t] = state_hz
    candidate = np.where(voiced, f0, best)
    return F0Contour(f0, voiced, voicing, candidate, cfg.hop_seconds, 0.0)


F0_TSV_HEADER = ("time_sec", "f0_hz", "voiced", "prob")


def format_f0(contour: F0Contour) -> str:
    rows = ["\t".join(F0_TSV_HEADER)]
    for i in range(contour.n_frames):
        t = contour.frame_zero_time + i * contour.hop_seconds
        f = contour.f0_hz[i] if contour.voiced[i] else contour.candidate_hz[i]
        rows.append(f"{t:.6f}\t{float(f)!r}\t{int(contour.voiced[i])}\t{float(contour.voicing_prob[i])!r}")
    return "\n".join(rows) + "\n"


def save_f0(path, contour: F0Contour) -> None:
    atomic_write_text(path, format_f0(contour))


def load_f0(path) -> F0Contour:
    """Read an F0 TSV; an unvoiced row's F0 is kept as its candidate."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip().split("\t") != list(F0_TSV_HEADER):
        raise FormatError(f"{path}:1: expected header {' '.join(F0_TSV_HEADER)!r}")
    times, f0, voiced, prob = [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 columns, got {len(cols)}")
        try:
            t, f, v, p = float(cols[0]), float(cols[1]), int(cols[2]), float(cols[3])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        if not np.isfinite(f) or f < 0:
            raise FormatError(f"{path}:{lineno}: negative or non-finite f0 {cols[1]}")
        if v not in (0, 1):
            raise FormatError(f"{path}:{lineno}: voiced flag must be 0 or 1")
        if v == 1 and f <= 0:
            raise FormatError(f"{path}:{lineno}: voiced frame with zero f0")
        if not 0.0 <= p <= 1.0:
            raise FormatError(f"{path}:{lineno}: probability {p} outside [0, 1]")
        times.append(t)
        f0.append(f)
        voiced.append(bool(v))
        prob.append(p)
    if not times:
        raise FormatError(f"{path}: no frames")
    times = np.asarray(times)
    hop = float(np.median(np.diff(times))) if times.size > 1 else 0.020
    hop = round(hop, 6)
    f0 = np.asarray(f0)
    voiced = np.asarray(voiced)
    return F0Contour(np.where(voiced, f0, 0.0), voiced, np.asarray(prob), f0, hop, float(times[0]))
