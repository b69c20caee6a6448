"""Acceptance criteria, one test each. Every test records a single PASS/FAIL line."""
import math
import time

import numpy as np
import pytest

from notegate.cli import main
from notegate.config import PipelineConfig
from notegate.ctc import ctc_log_likelihood, ctc_loss, ctc_loss_grad
from notegate.decode import FramePosteriors, decode_frames, weighted_median, weighted_median_pitch
from notegate.evaluate import (METRICS, MatchConfig, admissible, classify_onsets, max_matching,
                               onset_type_recall, score, sweep_threshold)
from notegate.features import AudioClip, MelSpectrogram
from notegate.ctc import Posteriorgram
from notegate.fixtures import soft_onset_validation, write_fixtures
from notegate.labels import FrameLabels, NoteEvent, notes_to_frames, read_notes, smooth_labels
from notegate.network import (WeightStore, conv2d, default_note_graph, default_phoneme_graph,
                              forward_note_model, forward_phoneme_model)
from notegate.pitch import hz_to_midi, track_f0
from oracles import (brute_force_ctc_prob_fast, brute_force_matching_size, finite_difference,
                     random_feasible_ctc, random_note_frames)

RESULTS: list[str] = []
HOP = 0.02


def record(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title} ({detail})"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_criterion_01_ctc_oracle():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst, n = 0.0, 0
    while n < 240:
        probs, target = random_feasible_ctc(rng, 6, 3)
        expected = -math.log(brute_force_ctc_prob_fast(probs, target))
        got = ctc_loss(probs, target)
        worst = max(worst, abs(got - expected) / max(abs(expected), 1e-300))
        n += 1
    elapsed = time.perf_counter() - start
    record(1, "CTC loss vs exhaustive path sum", worst <= 1e-9 and elapsed < 10,
           f"{n} instances, max rel err {worst:.2e}, {elapsed:.2f}s")


def test_criterion_02_ctc_gradient():
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        probs, target = random_feasible_ctc(rng, 8, 5)
        numeric = finite_difference(lambda x: -ctc_log_likelihood(x, target), probs, step=1e-6)
        grad = ctc_loss_grad(probs, target)
        err = np.abs(grad - numeric) / np.maximum(np.abs(numeric), 1e-3)
        worst = max(worst, float(err.max()))
    elapsed = time.perf_counter() - start
    record(2, "CTC gradient vs central differences", worst <= 1e-4 and elapsed < 30,
           f"50 instances, max rel err {worst:.2e}, {elapsed:.2f}s")


def test_criterion_03_label_smoothing():
    rng = np.random.default_rng(3)
    identity = True
    for _ in range(100):
        x = rng.integers(0, 2, size=int(rng.integers(1, 80))).astype(float)
        out = smooth_labels(FrameLabels(x, x, x), 1)
        identity &= np.array_equal(out.onset, x) and np.array_equal(out.offset, x)
    impulse = np.zeros(21)
    impulse[10] = 1.0
    resp = smooth_labels(FrameLabels(impulse, impulse, impulse), 5).onset
    exact = resp[8:13].tolist() == [1 / 3, 2 / 3, 1.0, 2 / 3, 1 / 3] and np.count_nonzero(resp) == 5
    centres = all(
        smooth_labels(FrameLabels(np.eye(30)[k], np.eye(30)[k], np.zeros(30)), n).onset[k] == 1.0
        for k in range(30) for n in (1, 3, 5, 7, 9))
    default_n = PipelineConfig().smoothing
    support = np.count_nonzero(smooth_labels(FrameLabels(impulse, impulse, impulse), default_n).onset)
    default_ok = support == 5 and math.isclose(support * HOP, 0.1)
    record(3, "label smoothing", identity and exact and centres and default_ok,
           f"N=1 identity {identity}, N=5 impulse {resp[8:13].round(4).tolist()}, "
           f"default support {support} frames = {support * HOP * 1000:.0f} ms")


def test_criterion_04_decode_round_trip():
    rng = np.random.default_rng(11)
    worst_on = worst_off = 0
    con = []
    for _ in range(100):
        spans, T = random_note_frames(rng, int(rng.integers(3, 31)), min_gap=2)
        ref = [NoteEvent(a * HOP, b * HOP) for a, b in spans]
        post = FramePosteriors.from_labels(notes_to_frames(ref, T))
        got = decode_frames(post)
        if len(got) != len(spans):
            worst_on = worst_off = 10 ** 6
            break
        worst_on = max(worst_on, max(abs(g[0] - s[0]) for g, s in zip(got, spans)))
        worst_off = max(worst_off, max(abs(g[1] - s[1]) for g, s in zip(got, spans)))
        est = [NoteEvent(a * HOP, b * HOP) for a, b in got]
        con.append(score(ref, est, metrics=("COn",))["COn"].f1)
    ok = worst_on <= 1 and worst_off <= 1 and min(con, default=0) == 1.0
    record(4, "labels -> posteriors -> decode round trip", ok,
           f"100 sequences, max onset err {worst_on} fr, max offset err {worst_off} fr, min COn {min(con):.3f}")


def test_criterion_05_metrics():
    ref = [NoteEvent(0.5, 1.0, 60.0), NoteEvent(1.5, 2.0, 62.0), NoteEvent(2.5, 3.0, 64.0)]
    est = [ref[0], ref[1], NoteEvent(2.8, 3.2, 64.0)]
    s = score(ref, est)["COn"]
    two_of_three = (s.precision, s.recall, s.f1) == pytest.approx((2 / 3, 2 / 3, 2 / 3))
    shift = [NoteEvent(n.onset + 0.06, n.offset + 0.06, n.pitch) for n in ref]
    at50 = score(ref, shift, MatchConfig.with_tolerance(0.05))["COn"].f1
    at100 = score(ref, shift, MatchConfig.with_tolerance(0.1))["COn"].f1
    long_ok = bool(admissible([NoteEvent(1.0, 2.0)], [NoteEvent(1.0, 2.15)], METRICS["COff"])[0, 0])
    short_ok = bool(admissible([NoteEvent(1.0, 1.2)], [NoteEvent(1.0, 1.26)], METRICS["COff"])[0, 0])

    rng = np.random.default_rng(5)
    mismatches, instances = 0, 0
    for _ in range(300):
        n_ref, n_est = int(rng.integers(0, 9)), int(rng.integers(0, 9))
        notes = []
        for n in (n_ref, n_est):
            on = np.sort(rng.uniform(0, 2, n))
            notes.append([NoteEvent(float(t), float(t + rng.uniform(0.05, 0.5)), float(rng.integers(60, 62)))
                          for t in on])
        for crit in METRICS.values():
            ok = admissible(notes[0], notes[1], crit, MatchConfig.with_tolerance(0.25))
            instances += 1
            mismatches += len(max_matching(ok)) != brute_force_matching_size(ok)
    passed = two_of_three and at50 == 0.0 and at100 == 1.0 and long_ok and not short_ok and mismatches == 0
    record(5, "note metrics", passed,
           f"2-of-3 F={s.f1:.4f}, +60ms COn@50={at50} @100={at100}, 1.0s/150ms match={long_ok}, "
           f"0.2s/60ms match={short_ok}, matching {instances - mismatches}/{instances} = exhaustive")


def _tone(segments, sr=16000, amp=0.5):
    parts, phase = [], 0.0
    for f, dur in segments:
        n = int(dur * sr)
        parts.append(amp * np.sin(phase + 2 * np.pi * f * np.arange(n) / sr))
        phase += 2 * np.pi * f * n / sr
    return AudioClip(np.concatenate(parts), sr)


def test_criterion_06_pitch():
    f0 = track_f0(_tone([(440.0, 1.0)]))
    p440 = weighted_median_pitch(f0, 0, f0.n_frames)
    err440 = abs(p440 - 69.0) * 100
    f0b = track_f0(_tone([(220.0, 0.6), (330.0, 0.6)]))
    p1 = weighted_median_pitch(f0b, 0, 30)
    p2 = weighted_median_pitch(f0b, 30, f0b.n_frames)
    err1 = abs(p1 - float(hz_to_midi(220.0))) * 100
    err2 = abs(p2 - float(hz_to_midi(330.0))) * 100
    wm = weighted_median([60, 60, 72], [1, 1, 1])
    record(6, "pitch tracking and weighted median", err440 <= 5 and err1 <= 10 and err2 <= 10 and wm == 60,
           f"440 Hz err {err440:.2f} c, plateaus {err1:.2f} c / {err2:.2f} c, median [60,60,72] -> {wm:g}")


def test_criterion_07_network_contracts():
    rng = np.random.default_rng(0)
    T = 8
    mel = MelSpectrogram(rng.uniform(-1, 1, (T, 80)))
    ppg = Posteriorgram(rng.dirichlet(np.ones(40), size=T))
    g = default_note_graph()
    out = forward_note_model(mel, ppg, g, WeightStore.random(g, seed=1, scale=0.05)).as_matrix()
    shape_ok = out.shape == (T, 3) and bool(np.all((out > 0) & (out < 1)))
    zeros = forward_note_model(mel, ppg, g, WeightStore.zeros(g)).as_matrix()
    half_ok = bool(np.all(zeros == 0.5))

    first = g.branches["mel"].layers[0]
    x = np.zeros((1, 11, 1))
    x[0, 5, 0] = 1.0
    offsets = set()
    for tap in range(first.kernel[0]):
        w = np.zeros((1, 1, first.kernel[0], 1))
        w[0, 0, tap, 0] = 1.0
        y = conv2d(x, w, np.zeros(1), first.dilation)[0, :, 0]
        offsets |= {int(i) - 5 for i in np.flatnonzero(y)}

    pg = default_phoneme_graph()
    rows = forward_phoneme_model(mel, pg, WeightStore.random(pg, seed=2, scale=0.05)).frames.sum(axis=1)
    row_err = float(np.abs(rows - 1).max())
    record(7, "network contracts", shape_ok and half_ok and offsets == {-2, 0, 2} and row_err <= 1e-5,
           f"output {out.shape} in (0,1)={shape_ok}, zero weights -> 0.5={half_ok}, "
           f"dilation offsets {sorted(offsets)}, PPG row-sum err {row_err:.1e}")


def test_criterion_08_end_to_end(tmp_path):
    start = time.perf_counter()
    fx = write_fixtures(tmp_path)
    out = tmp_path / "melody.est.tsv"
    code = main(["transcribe", str(fx["wav"]), "-o", str(out),
                 "--graph", str(fx["note_graph"]), "--weights", str(fx["note_weights"]),
                 "--phoneme-graph", str(fx["phoneme_graph"]), "--phoneme-weights", str(fx["phoneme_weights"])])
    elapsed = time.perf_counter() - start
    f1 = score(read_notes(fx["notes"]), read_notes(out))["COnPOff"].f1 if code == 0 else 0.0
    record(8, "synthetic clip through transcribe", code == 0 and f1 == 1.0 and elapsed < 5,
           f"exit {code}, COnPOff {f1:.3f} at 50 ms / 50 cents, {elapsed:.2f}s")


def test_criterion_09_onset_types():
    ref = [NoteEvent(0.0, 0.5, 60.0), NoteEvent(0.5, 1.0, 62.0), NoteEvent(1.01, 1.5, 62.0),
           NoteEvent(2.0, 2.5, 62.0), NoteEvent(2.52, 3.0, 67.0)]
    tags = classify_onsets(ref)
    expected = ["plain", "transition", "re-onset", "plain", "transition"]
    est = [n for i, n in enumerate(ref) if i != 2]
    recall = onset_type_recall(ref, est)
    ok = tags == expected and recall == {"transition": 1.0, "re-onset": 0.0, "plain": 1.0}
    record(9, "onset-type analysis", ok, f"tags {tags}, recall without re-onset {recall}")


def test_criterion_10_threshold_sweep():
    post, ref = soft_onset_validation()
    result = sweep_threshold([(post, None, ref)], thresholds=[round(0.1 * k, 1) for k in range(1, 10)])
    curve = {k: round(v["COn"]["f1"], 3) for k, v in result.scores.items()}
    record(10, "threshold sweep", result.best_threshold == 0.2,
           f"best {result.best_threshold}, COn F1 {curve}")
