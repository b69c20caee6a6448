"""Phoneme-informed note-level singing transcription and evaluation."""

from .ctc import (InfeasibleAlignmentError, PhonemeInventory, PhonemeSequence, Posteriorgram,
                  collapse, ctc_loss, ctc_loss_grad, ppg_loss, reconstruction_loss)
from .decode import (DecodeConfig, FramePosteriors, decode_notes, pick_onsets, resolve_offset,
                     transcribe, weighted_median_pitch)
from .evaluate import (MatchConfig, ScoreReport, classify_onsets, match_notes, onset_type_recall,
                       score, sweep_threshold)
from .features import (AudioClip, FeatureConfig, MelSpectrogram, load_audio, mel_spectrogram,
                       normalize_mel, resample)
from .labels import FrameLabels, NoteEvent, notes_to_frames, smooth_labels, triangular_window
from .network import (ModelGraph, WeightStore, forward_note_model, forward_phoneme_model,
                      load_graph, load_weights, validate)
from .pitch import F0Contour, PitchConfig, load_f0, save_f0, track_f0

__version__ = "0.1.0"
