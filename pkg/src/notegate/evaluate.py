"""Note-level transcription metrics and onset-type analysis.

Pairs are admissible when every selected criterion holds and the score is
computed from a maximum-cardinality one-to-one matching, as in mir_eval.
Time differences are rounded to 4 decimals before being compared with the
tolerances so that values such as 0.05 are not lost to float error.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .decode import DecodeConfig, FramePosteriors, decode_notes, transcribe
from .labels import NoteEvent

METRICS = {
    "COn": frozenset({"onset"}),
    "COff": frozenset({"offset"}),
    "COnOff": frozenset({"onset", "offset"}),
    "COnP": frozenset({"onset", "pitch"}),
    "COnPOff": frozenset({"onset", "offset", "pitch"}),
}
ONSET_TYPES = ("transition", "re-onset", "plain")
_DECIMALS = 4


@dataclass(frozen=True)
class MatchConfig:
    onset_tolerance: float = 0.05
    offset_min_tolerance: float = 0.05
    offset_ratio: float = 0.2
    pitch_tolerance_cents: float = 50.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v > 0:
                raise ValueError(f"{k} must be positive, got {v}")

    @classmethod
    def with_tolerance(cls, seconds: float) -> "MatchConfig":
        """Onset tolerance and offset floor both set to ``seconds``."""
        return cls(onset_tolerance=seconds, offset_min_tolerance=seconds)

    @property
    def label(self) -> str:
        return f"{round(self.onset_tolerance * 1000)}ms"


class UnsortedError(ValueError):
    pass


def _check_sorted(notes: Sequence[NoteEvent], which: str) -> None:
    for i in range(1, len(notes)):
        if notes[i].onset < notes[i - 1].onset:
            raise UnsortedError(f"{which} notes are not sorted by onset (index {i})")


def admissible(ref: Sequence[NoteEvent], est: Sequence[NoteEvent], criteria: Iterable[str],
               cfg: MatchConfig = MatchConfig()) -> np.ndarray:
    """Boolean ``len(ref) x len(est)`` matrix of pairs satisfying every criterion."""
    criteria = frozenset(criteria)
    unknown = criteria - {"onset", "offset", "pitch"}
    if unknown:
        raise ValueError(f"unknown criteria {sorted(unknown)}")
    ok = np.ones((len(ref), len(est)), dtype=bool)
    if not ref or not est:
        return ok
    r_on = np.array([n.onset for n in ref])
    e_on = np.array([n.onset for n in est])
    if "onset" in criteria:
        ok &= np.round(np.abs(r_on[:, None] - e_on[None, :]), _DECIMALS) <= cfg.onset_tolerance
    if "offset" in criteria:
        r_off = np.array([n.offset for n in ref])
        e_off = np.array([n.offset for n in est])
        tol = np.maximum(cfg.offset_min_tolerance, cfg.offset_ratio * (r_off - r_on))
        ok &= np.round(np.abs(r_off[:, None] - e_off[None, :]), _DECIMALS) <= np.round(tol, _DECIMALS)[:, None]
    if "pitch" in criteria:
        if any(n.pitch is None for n in ref) or any(n.pitch is None for n in est):
            raise ValueError("pitch criterion needs pitched reference and estimate notes")
        r_p = np.array([n.pitch for n in ref])
        e_p = np.array([n.pitch for n in est])
        cents = 100.0 * np.abs(r_p[:, None] - e_p[None, :])
        ok &= np.round(cents, _DECIMALS) <= cfg.pitch_tolerance_cents
    return ok


def max_matching(ok: np.ndarray) -> list[tuple[int, int]]:
    """Maximum-cardinality matching (Hopcroft-Karp) on a boolean adjacency matrix."""
    if ok.size == 0 or not ok.any():
        return []
    match = maximum_bipartite_matching(csr_matrix(ok.astype(np.int8)), perm_type="column")
    return sorted((int(r), int(e)) for r, e in enumerate(match) if e >= 0)


def match_notes(ref: Sequence[NoteEvent], est: Sequence[NoteEvent], criteria: Iterable[str],
                cfg: MatchConfig = MatchConfig()) -> list[tuple[int, int]]:
    """One-to-one ``(ref_index, est_index)`` pairs of maximum cardinality."""
    _check_sorted(ref, "reference")
    _check_sorted(est, "estimated")
    return max_matching(admissible(ref, est, criteria, cfg))


@dataclass(frozen=True)
class MetricScore:
    precision: float
    recall: float
    f1: float
    matches: tuple[tuple[int, int], ...] = ()

    def as_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


def prf(n_matched: int, n_ref: int, n_est: int) -> tuple[float, float, float]:
    if n_ref == 0 and n_est == 0:
        return 1.0, 1.0, 1.0
    p = n_matched / n_est if n_est else 0.0
    r = n_matched / n_ref if n_ref else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


@dataclass(frozen=True)
class ScoreReport:
    metrics: dict[str, MetricScore]
    n_ref: int
    n_est: int

    def __getitem__(self, name: str) -> MetricScore:
        return self.metrics[name]

    def as_dict(self) -> dict:
        return {k: v.as_dict() for k, v in self.metrics.items()}


def score(ref: Sequence[NoteEvent], est: Sequence[NoteEvent], cfg: MatchConfig = MatchConfig(),
          metrics: Iterable[str] = METRICS) -> ScoreReport:
    """All note metrics. Pitch metrics are skipped when either side is unpitched."""
    pitched = all(n.pitch is not None for n in ref) and all(n.pitch is not None for n in est)
    out = {}
    for name in metrics:
        crit = METRICS[name]
        if "pitch" in crit and not pitched:
            continue
        pairs = match_notes(ref, est, crit, cfg)
        p, r, f = prf(len(pairs), len(ref), len(est))
        out[name] = MetricScore(p, r, f, tuple(pairs))
    return ScoreReport(out, len(ref), len(est))


def classify_onsets(ref: Sequence[NoteEvent], gap: float = 0.020,
                    pitch_change: float = 0.5) -> list[str]:
    """Tag each note ``transition``, ``re-onset`` or ``plain`` by its predecessor."""
    _check_sorted(ref, "reference")
    tags = []
    for k, note in enumerate(ref):
        if k == 0 or round(note.onset - ref[k - 1].offset, _DECIMALS) > gap:
            tags.append("plain")
            continue
        prev = ref[k - 1]
        if note.pitch is None or prev.pitch is None:
            raise ValueError(f"notes {k - 1} and {k} abut but lack pitch")
        tags.append("transition" if abs(note.pitch - prev.pitch) > pitch_change else "re-onset")
    return tags


def onset_type_recall(ref: Sequence[NoteEvent], est: Sequence[NoteEvent],
                      cfg: MatchConfig = MatchConfig()) -> dict[str, float | None]:
    """COn recall restricted to each onset type; ``None`` when a type is absent."""
    tags = classify_onsets(ref)
    matched = {r for r, _ in match_notes(ref, est, METRICS["COn"], cfg)}
    out: dict[str, float | None] = {}
    for kind in ONSET_TYPES:
        idx = [i for i, t in enumerate(tags) if t == kind]
        out[kind] = sum(i in matched for i in idx) / len(idx) if idx else None
    return out


def aggregate(reports: Sequence[ScoreReport]) -> dict:
    """Micro (count-pooled) and macro (per-song mean) averages of each metric."""
    names = [m for m in METRICS if all(m in r.metrics for r in reports)]
    micro, macro = {}, {}
    for m in names:
        matched = sum(len(r[m].matches) for r in reports)
        n_ref = sum(r.n_ref for r in reports)
        n_est = sum(r.n_est for r in reports)
        p, rc, f = prf(matched, n_ref, n_est)
        micro[m] = {"precision": p, "recall": rc, "f1": f}
        macro[m] = {k: float(np.mean([getattr(r[m], k) for r in reports])) for k in ("precision", "recall", "f1")}
    return {"micro": micro, "macro": macro}


@dataclass
class SweepResult:
    best_threshold: float
    scores: dict[float, dict] = field(default_factory=dict)


def sweep_threshold(pairs: Sequence[tuple[FramePosteriors, object, Sequence[NoteEvent]]],
                    thresholds: Sequence[float] | None = None,
                    cfg: MatchConfig = MatchConfig(),
                    base: DecodeConfig = DecodeConfig()) -> SweepResult:
    """Pick the onset/offset threshold maximising pooled COn F1.

    ``pairs`` holds ``(posteriors, f0_or_None, reference_notes)`` per song.
    The earliest threshold wins ties.
    """
    if not pairs:
        raise ValueError("threshold sweep needs at least one validation pair")
    if thresholds is None:
        thresholds = [round(0.1 * k, 1) for k in range(1, 10)]
    best, best_f = None, -1.0
    scores = {}
    for th in thresholds:
        dc = DecodeConfig(th, th, base.activation_cutoff, base.unvoiced_fallback)
        reports = []
        for post, f0, ref in pairs:
            est = transcribe(post, f0, dc) if f0 is not None else decode_notes(post, dc)
            reps = score(ref, est, cfg, metrics=("COn",))
            reports.append(reps)
        agg = aggregate(reports)["micro"]
        scores[th] = agg
        f = agg["COn"]["f1"]
        if f > best_f + 1e-12:
            best, best_f = th, f
    return SweepResult(best, scores)
