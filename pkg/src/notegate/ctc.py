"""Phoneme inventory, posteriorgrams and the phoneme-classifier losses.

The CTC recursions run in log space over the blank-augmented label sequence
``[-, l1, -, l2, -, ..., lL, -]``. The blank is always the last class.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

PROB_FLOOR = 1e-30


class InfeasibleAlignmentError(ValueError):
    """The target cannot be aligned to the given number of frames."""


@dataclass(frozen=True)
class PhonemeInventory:
    symbols: tuple[str, ...]

    def __post_init__(self):
        symbols = tuple(self.symbols)
        if len(set(symbols)) != len(symbols):
            dupes = sorted({s for s in symbols if symbols.count(s) > 1})
            raise ValueError(f"duplicate phoneme symbols: {dupes}")
        object.__setattr__(self, "symbols", symbols)

    @property
    def size(self) -> int:
        """Number of phoneme classes K (blank excluded)."""
        return len(self.symbols)

    @property
    def blank_index(self) -> int:
        return len(self.symbols)

    @property
    def n_classes(self) -> int:
        return len(self.symbols) + 1

    def index(self, symbol: str) -> int:
        try:
            return self.symbols.index(symbol)
        except ValueError:
            raise KeyError(f"unknown phoneme {symbol!r}") from None

    def encode(self, symbols: Sequence[str]) -> "PhonemeSequence":
        return PhonemeSequence(tuple(self.index(s) for s in symbols), self.size)

    @classmethod
    def from_file(cls, path) -> "PhonemeInventory":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(ln.strip() for ln in lines if ln.strip()))

    @classmethod
    def default(cls) -> "PhonemeInventory":
        text = resources.files("notegate").joinpath("data/cmu39.txt").read_text(encoding="utf-8")
        return cls(tuple(ln.strip() for ln in text.splitlines() if ln.strip()))


@dataclass(frozen=True)
class PhonemeSequence:
    labels: tuple[int, ...]
    n_phonemes: int | None = None

    def __post_init__(self):
        labels = tuple(int(v) for v in self.labels)
        if any(v < 0 for v in labels):
            raise ValueError("phoneme indices must be non-negative")
        if self.n_phonemes is not None and any(v >= self.n_phonemes for v in labels):
            raise ValueError(f"phoneme index out of range for K={self.n_phonemes} (blanks not allowed)")
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)

    def min_frames(self) -> int:
        """Shortest frame count that admits an alignment."""
        repeats = sum(1 for a, b in zip(self.labels, self.labels[1:]) if a == b)
        return len(self.labels) + repeats


def read_target(path, inventory: PhonemeInventory) -> PhonemeSequence:
    return inventory.encode(Path(path).read_text(encoding="utf-8").split())


@dataclass(frozen=True, eq=False)
class Posteriorgram:
    frames: np.ndarray
    hop_seconds: float = 0.020
    frame_zero_time: float = 0.0
    inventory: PhonemeInventory | None = field(default=None, repr=False)

    def __post_init__(self):
        p = np.array(self.frames, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] < 1:
            raise ValueError(f"posteriorgram must be T x (K+1), got shape {p.shape}")
        if self.inventory is not None and p.shape[1] != self.inventory.n_classes:
            raise ValueError(
                f"posteriorgram has {p.shape[1]} columns, inventory needs {self.inventory.n_classes}")
        if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
            raise ValueError("posteriorgram entries must lie in [0, 1]")
        bad = np.flatnonzero(np.abs(p.sum(axis=1) - 1.0) > 1e-5)
        if bad.size:
            raise ValueError(f"posteriorgram rows do not sum to 1 (first bad frame {bad[0]})")
        p.setflags(write=False)
        object.__setattr__(self, "frames", p)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def blank_index(self) -> int:
        return self.frames.shape[1] - 1


def collapse(path: Sequence[int], blank: int) -> PhonemeSequence:
    """Merge consecutive repeats, then drop blanks."""
    out = []
    prev = None
    for k in path:
        k = int(k)
        if k > blank or k < 0:
            raise ValueError(f"class index {k} outside 0..{blank}")
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return PhonemeSequence(tuple(out), blank)


def _as_probs(ppg) -> np.ndarray:
    p = getattr(ppg, "frames", ppg)
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError(f"posteriors must be 2-D, got shape {p.shape}")
    return p


def _labels(target) -> tuple[int, ...]:
    return tuple(getattr(target, "labels", target))


def _extended(labels: tuple[int, ...], blank: int) -> tuple[np.ndarray, np.ndarray]:
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    # a label state may be entered from two states back unless it repeats that label
    skip = np.zeros(ext.size, dtype=bool)
    skip[3::2] = ext[3::2] != ext[1:-2:2]
    return ext, skip


def _check_feasible(labels, n_frames: int, n_classes: int) -> None:
    if any(k < 0 or k >= n_classes - 1 for k in labels):
        raise ValueError(f"target indices must be in 0..{n_classes - 2} (blank excluded)")
    seq = PhonemeSequence(labels)
    if n_frames < seq.min_frames():
        raise InfeasibleAlignmentError(
            f"no valid alignment: target of length {len(labels)} needs at least "
            f"{seq.min_frames()} frames, got {n_frames}")


def _forward(logy: np.ndarray, ext: np.ndarray, skip: np.ndarray) -> np.ndarray:
    T, S = logy.shape[0], ext.size
    alpha = np.full((T, S), -np.inf)
    alpha[0, 0] = logy[0, ext[0]]
    if S > 1:
        alpha[0, 1] = logy[0, ext[1]]
    emit = logy[:, ext]
    for t in range(1, T):
        prev = alpha[t - 1]
        terms = np.full((3, S), -np.inf)
        terms[0] = prev
        terms[1, 1:] = prev[:-1]
        terms[2, 2:] = np.where(skip[2:], prev[:-2], -np.inf)
        alpha[t] = _logsumexp0(terms) + emit[t]
    return alpha


def _backward(logy: np.ndarray, ext: np.ndarray, skip: np.ndarray) -> np.ndarray:
    T, S = logy.shape[0], ext.size
    beta = np.full((T, S), -np.inf)
    beta[T - 1, S - 1] = logy[T - 1, ext[S - 1]]
    if S > 1:
        beta[T - 1, S - 2] = logy[T - 1, ext[S - 2]]
    emit = logy[:, ext]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        terms = np.full((3, S), -np.inf)
        terms[0] = nxt
        terms[1, :-1] = nxt[1:]
        terms[2, :-2] = np.where(skip[2:], nxt[2:], -np.inf)
        beta[t] = _logsumexp0(terms) + emit[t]
    return beta


def _logsumexp0(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=0)
    finite = np.isfinite(m)
    safe = np.where(finite, m, 0.0)
    with np.errstate(divide="ignore"):
        out = safe + np.log(np.exp(a - safe).sum(axis=0))
    return np.where(finite, out, -np.inf)


def _log_total(alpha: np.ndarray) -> float:
    last = alpha[-1, -2:] if alpha.shape[1] > 1 else alpha[-1, -1:]
    return float(_logsumexp0(last[:, None])[0])


def ctc_log_likelihood(ppg, target) -> float:
    """log of the summed probability of every alignment collapsing to ``target``."""
    probs = _as_probs(ppg)
    labels = _labels(target)
    _check_feasible(labels, probs.shape[0], probs.shape[1])
    blank = probs.shape[1] - 1
    logy = np.log(np.maximum(probs, PROB_FLOOR))
    ext, skip = _extended(labels, blank)
    return _log_total(_forward(logy, ext, skip))


def ctc_loss(ppg, target) -> float:
    """Negative log-likelihood of ``target`` under frame posteriors ``ppg``.

    Args:
        ppg: :class:`Posteriorgram` or a ``T x (K+1)`` array, blank last.
        target: :class:`PhonemeSequence` or a sequence of class indices.

    Raises:
        InfeasibleAlignmentError: if ``T`` is too short for the target.
    """
    return max(0.0, -ctc_log_likelihood(ppg, target))


def ctc_loss_grad(ppg, target) -> np.ndarray:
    """Gradient of :func:`ctc_loss` with respect to every posterior cell."""
    probs = _as_probs(ppg)
    labels = _labels(target)
    _check_feasible(labels, probs.shape[0], probs.shape[1])
    blank = probs.shape[1] - 1
    logy = np.log(np.maximum(probs, PROB_FLOOR))
    ext, skip = _extended(labels, blank)
    alpha = _forward(logy, ext, skip)
    beta = _backward(logy, ext, skip)
    log_p = _log_total(alpha)

    # alpha and beta both include the emission at t, hence the 2*logy
    occupancy = alpha + beta
    grad = np.zeros_like(probs)
    for k in np.unique(ext):
        cols = occupancy[:, ext == k]
        lse = _logsumexp0(cols.T)
        with np.errstate(over="ignore"):
            grad[:, k] = -np.exp(lse - log_p - 2.0 * logy[:, k])
    return grad


def reconstruction_loss(reconstructed, target_normalized) -> float:
    """Sum of squared differences between reconstructed and normalized mel."""
    a = np.asarray(getattr(reconstructed, "frames", reconstructed), dtype=np.float64)
    b = np.asarray(getattr(target_normalized, "frames", target_normalized), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: reconstructed {a.shape} vs target {b.shape}")
    return float(np.sum((a - b) ** 2))


def ppg_loss(ctc: float, recon: float) -> float:
    if ctc < 0 or recon < 0:
        raise ValueError("loss terms must be non-negative")
    return float(ctc) + float(recon)
