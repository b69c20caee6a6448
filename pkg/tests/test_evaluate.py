import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from notegate.decode import FramePosteriors
from notegate.evaluate import (METRICS, MatchConfig, UnsortedError, admissible, aggregate, classify_onsets,
                               match_notes, max_matching, onset_type_recall, prf, score, sweep_threshold)
from notegate.fixtures import soft_onset_validation
from notegate.labels import NoteEvent
from oracles import brute_force_matching_size

REF = [NoteEvent(0.5, 1.0, 60.0), NoteEvent(1.5, 2.0, 62.0), NoteEvent(2.5, 3.0, 64.0)]


def shifted(notes, dt):
    return [NoteEvent(n.onset + dt, n.offset + dt, n.pitch) for n in notes]


def test_two_of_three():
    p, r, f = prf(2, 3, 3)
    assert (p, r, f) == pytest.approx((2 / 3, 2 / 3, 2 / 3))
    s = score(REF, REF[:2])
    assert s["COn"].recall == pytest.approx(2 / 3) and s["COn"].precision == 1.0
    assert s["COn"].f1 == pytest.approx(0.8)


def test_perfect_and_empty():
    assert all(m.f1 == 1.0 for m in score(REF, REF).metrics.values())
    assert score([], [])["COn"].f1 == 1.0
    assert score(REF, [])["COn"].f1 == 0.0
    assert score([], REF)["COn"].precision == 0.0


@pytest.mark.parametrize("tol, expected", [(0.05, 0.0), (0.1, 1.0)])
def test_sixty_ms_shift(tol, expected):
    assert score(REF, shifted(REF, 0.06), MatchConfig.with_tolerance(tol))["COn"].f1 == expected


def test_tolerance_boundary_is_inclusive():
    assert score(REF, shifted(REF, 0.05))["COn"].f1 == 1.0


@pytest.mark.parametrize("ref, est, ok", [
    (NoteEvent(1.0, 2.0), NoteEvent(1.0, 2.15), True),
    (NoteEvent(1.0, 1.2), NoteEvent(1.0, 1.26), False),
    (NoteEvent(1.0, 1.2), NoteEvent(1.0, 1.25), True),
])
def test_offset_tolerance_rule(ref, est, ok):
    assert bool(admissible([ref], [est], METRICS["COff"])[0, 0]) is ok


@pytest.mark.parametrize("dp, ok", [(0.5, True), (0.49, True), (0.51, False)])
def test_pitch_tolerance(dp, ok):
    a = [NoteEvent(0.0, 1.0, 60.0)]
    b = [NoteEvent(0.0, 1.0, 60.0 + dp)]
    assert bool(admissible(a, b, METRICS["COnP"])[0, 0]) is ok


def test_each_note_matched_once():
    ref = [NoteEvent(1.0, 1.5)]
    est = [NoteEvent(0.99, 1.5), NoteEvent(1.01, 1.6)]
    assert len(match_notes(ref, est, METRICS["COn"])) == 1


def test_unsorted_input():
    with pytest.raises(UnsortedError):
        match_notes(REF[::-1], REF, METRICS["COn"])


def test_pitch_metrics_skipped_for_unpitched():
    s = score([NoteEvent(0, 1)], [NoteEvent(0, 1)])
    assert set(s.metrics) == {"COn", "COff", "COnOff"}


def random_notes(rng, n):
    onsets = np.sort(rng.uniform(0, 3, n))
    return [NoteEvent(round(float(t), 3), round(float(t) + float(rng.uniform(0.05, 0.6)), 3),
                      float(rng.integers(60, 63))) for t in onsets]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 8), st.integers(0, 8))
def test_matching_is_maximum(seed, n_ref, n_est):
    rng = np.random.default_rng(seed)
    ref, est = random_notes(rng, n_ref), random_notes(rng, n_est)
    cfg = MatchConfig.with_tolerance(0.3)
    for crit in METRICS.values():
        ok = admissible(ref, est, crit, cfg)
        pairs = max_matching(ok)
        assert len(pairs) == brute_force_matching_size(ok)
        assert len({r for r, _ in pairs}) == len({e for _, e in pairs}) == len(pairs)
        assert all(ok[r, e] for r, e in pairs)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_metric_nesting(seed):
    rng = np.random.default_rng(seed)
    ref, est = random_notes(rng, 6), random_notes(rng, 6)
    s = score(ref, est, MatchConfig.with_tolerance(0.2))
    n = {k: len(v.matches) for k, v in s.metrics.items()}
    assert n["COnPOff"] <= min(n["COnOff"], n["COnP"])
    assert n["COnOff"] <= min(n["COn"], n["COff"])
    assert n["COnP"] <= n["COn"]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_onset_metric_symmetry(seed):
    rng = np.random.default_rng(seed)
    a, b = random_notes(rng, 5), random_notes(rng, 7)
    ab, ba = score(a, b)["COn"], score(b, a)["COn"]
    assert ab.precision == pytest.approx(ba.recall)
    assert ab.f1 == pytest.approx(ba.f1)


def test_aggregate_micro_and_macro():
    r1 = score(REF, REF)
    r2 = score(REF, [])
    agg = aggregate([r1, r2])
    assert agg["macro"]["COn"]["recall"] == pytest.approx(0.5)
    assert agg["micro"]["COn"]["recall"] == pytest.approx(0.5)
    assert agg["micro"]["COn"]["precision"] == pytest.approx(1.0)
    assert agg["macro"]["COn"]["precision"] == pytest.approx(0.5)


TYPED = [
    NoteEvent(0.0, 0.5, 60.0),   # plain
    NoteEvent(0.5, 1.0, 62.0),   # transition
    NoteEvent(1.01, 1.5, 62.0),  # re-onset
    NoteEvent(2.0, 2.5, 62.0),   # plain
    NoteEvent(2.52, 3.0, 67.0),  # transition
]


def test_classify_onsets():
    assert classify_onsets(TYPED) == ["plain", "transition", "re-onset", "plain", "transition"]


def test_classify_gap_boundary():
    notes = [NoteEvent(0.0, 0.5, 60.0), NoteEvent(0.521, 1.0, 60.0)]
    assert classify_onsets(notes) == ["plain", "plain"]


def test_onset_type_recall():
    full = onset_type_recall(TYPED, TYPED)
    assert full == {"transition": 1.0, "re-onset": 1.0, "plain": 1.0}
    dropped = onset_type_recall(TYPED, [n for i, n in enumerate(TYPED) if i != 2])
    assert dropped == {"transition": 1.0, "re-onset": 0.0, "plain": 1.0}
    assert onset_type_recall(TYPED[:1], TYPED[:1])["re-onset"] is None


def test_sweep_picks_engineered_threshold():
    post, ref = soft_onset_validation()
    result = sweep_threshold([(post, None, ref)])
    assert result.best_threshold == 0.2
    assert list(result.scores) == [round(0.1 * k, 1) for k in range(1, 10)]
    assert result.scores[0.2]["COn"]["f1"] == 1.0


def test_sweep_prefers_earliest_tie():
    x = np.zeros(20)
    x[5] = 1.0
    post = FramePosteriors(x, np.zeros(20), np.zeros(20))
    result = sweep_threshold([(post, None, [NoteEvent(0.1, 0.38)])])
    assert result.best_threshold == 0.1


def test_sweep_needs_data():
    with pytest.raises(ValueError):
        sweep_threshold([])


def test_label_names():
    assert MatchConfig.with_tolerance(0.1).label == "100ms"
    assert MatchConfig().label == "50ms"
