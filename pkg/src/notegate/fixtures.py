"""Synthetic assets: sine-tone melodies, hand-wired tiny models, validation posteriors.

The tiny note model reads three features off the log-mel image with one
time-dilated convolution (level ``x[t]``, rise ``x[t] - x[t-2]``, fall
``x[t] - x[t+2]``), max-pools them over frequency and maps them through a
sigmoid head. It needs no training and decodes clean sine melodies exactly.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .decode import FramePosteriors
from .features import AudioClip, save_audio
from .labels import NoteEvent, notes_to_frames, smooth_labels, write_notes
from .network import Branch, LayerSpec, ModelGraph, WeightStore, save_graph, save_weights
from .pitch import midi_to_hz

DEFAULT_MELODY = (
    NoteEvent(0.20, 0.60, 60.0),
    NoteEvent(0.80, 1.20, 64.0),
    NoteEvent(1.40, 1.90, 67.0),
)


def sine_melody(notes: Sequence[NoteEvent] = DEFAULT_MELODY, duration: float = 2.2,
                sample_rate: int = 16000, amplitude: float = 0.5, fade: float = 0.005) -> AudioClip:
    """Phase-continuous sine notes with short raised-cosine fades, silence elsewhere."""
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    x = np.zeros(n)
    for note in notes:
        mask = (t >= note.onset) & (t < note.offset)
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            continue
        local = np.arange(idx.size) / sample_rate
        env = np.ones(idx.size)
        k = min(int(fade * sample_rate), idx.size // 2)
        if k > 0:
            ramp = 0.5 * (1 - np.cos(np.pi * np.arange(k) / k))
            env[:k] = ramp
            env[-k:] = ramp[::-1]
        x[idx] = amplitude * env * np.sin(2 * np.pi * float(midi_to_hz(note.pitch)) * local)
    return AudioClip(x, sample_rate)


def tiny_note_graph(n_mels: int = 80, n_ppg: int = 40) -> ModelGraph:
    mel = Branch(n_mels, (
        LayerSpec("conv2d", channels=3, kernel=(3, 1), dilation=(2, 1)),
        LayerSpec("pooling", pool=(1, n_mels)),
    ))
    ppg = Branch(n_ppg, (LayerSpec("pooling", pool=(1, n_ppg)),))
    head = (LayerSpec("dense", units=3, activation="sigmoid"),)
    return ModelGraph({"mel": mel, "ppg": ppg}, ("mel", "ppg"), head, name="tiny-note")


def tiny_note_weights(gain: float = 0.5, edge_level: float = 15.0) -> WeightStore:
    conv = np.zeros((3, 1, 3, 1), dtype=np.float32)
    conv[0, 0, :, 0] = [0, 1, 0]   # level x[t]
    conv[1, 0, :, 0] = [-1, 1, 0]  # rise x[t] - x[t-2]
    conv[2, 0, :, 0] = [0, 1, -1]  # fall x[t] - x[t+2]
    dense = np.zeros((3, 4), dtype=np.float32)
    dense[0, 1] = gain
    dense[1, 2] = gain
    dense[2, 0], dense[2, 2] = gain, -gain
    bias = np.array([-gain * edge_level, -gain * edge_level, 0.0], dtype=np.float32)
    return WeightStore({
        "mel.0.weight": conv, "mel.0.bias": np.zeros(3, dtype=np.float32),
        "head.0.weight": dense, "head.0.bias": bias,
    })


def tiny_phoneme_graph(n_mels: int = 80, n_classes: int = 40) -> ModelGraph:
    mel = Branch(n_mels, (LayerSpec("pooling", pool=(1, n_mels)),))
    head = (LayerSpec("dense", units=n_classes, activation="softmax"),)
    return ModelGraph({"mel": mel}, ("mel",), head, name="tiny-phoneme")


def soft_onset_validation(hop: float = 0.020) -> tuple[FramePosteriors, list[NoteEvent]]:
    """Posteriors that decode perfectly only at threshold 0.2.

    Two onsets peak at 0.25 (lost from 0.3 up) and a spurious 0.15 bump sits
    inside the last note (extra onset at 0.1).
    """
    ref = [NoteEvent(0.2, 0.5, 60.0), NoteEvent(0.7, 1.0, 62.0), NoteEvent(1.2, 1.5, 64.0),
           NoteEvent(1.7, 2.0, 65.0), NoteEvent(2.2, 2.8, 67.0)]
    T = 160
    labels = smooth_labels(notes_to_frames(ref, T, hop), 5)
    onset = labels.onset.copy()
    for note in (ref[1], ref[3]):
        c = int(round(note.onset / hop))
        onset[c - 2: c + 3] *= 0.25
    bump = int(round(2.5 / hop))
    onset[bump - 1: bump + 2] = [0.12, 0.15, 0.12]
    return FramePosteriors(onset, labels.offset, labels.activation, hop, 0.0), ref


def write_fixtures(out_dir) -> dict[str, Path]:
    """Write the synthetic clip, its reference notes, and tiny model files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "wav": out / "melody.wav",
        "notes": out / "melody.notes.tsv",
        "note_graph": out / "tiny_note.graph.json",
        "note_weights": out / "tiny_note.weights.json",
        "phoneme_graph": out / "tiny_phoneme.graph.json",
        "phoneme_weights": out / "tiny_phoneme.weights.json",
        "val_posteriors": out / "validation.posteriors.f32m",
        "val_notes": out / "validation.notes.tsv",
    }
    save_audio(paths["wav"], sine_melody(), subtype="float32")
    write_notes(paths["notes"], list(DEFAULT_MELODY))
    save_graph(paths["note_graph"], tiny_note_graph())
    save_weights(paths["note_weights"], tiny_note_weights())
    pg = tiny_phoneme_graph()
    save_graph(paths["phoneme_graph"], pg)
    save_weights(paths["phoneme_weights"], WeightStore.zeros(pg))

    from .formats import write_f32m

    post, ref = soft_onset_validation()
    write_f32m(paths["val_posteriors"], post.as_matrix(), post.hop_seconds, post.frame_zero_time)
    write_notes(paths["val_notes"], ref)
    return paths
