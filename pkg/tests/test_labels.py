import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from notegate.formats import FormatError
from notegate.labels import (FrameLabels, NoteEvent, OverlapError, format_notes, notes_to_frames,
                             read_notes, smooth_labels, sort_and_check, time_to_frame, triangular_window,
                             write_notes)


@pytest.mark.parametrize("n, expected", [
    (1, [1.0]),
    (3, [0.5, 1.0, 0.5]),
    (5, [1 / 3, 2 / 3, 1.0, 2 / 3, 1 / 3]),
])
def test_triangular_window(n, expected):
    np.testing.assert_allclose(triangular_window(n), expected, rtol=1e-15)


@pytest.mark.parametrize("n", [0, 2, 4, -1, 2.5])
def test_triangular_window_rejects_even(n):
    with pytest.raises(ValueError):
        triangular_window(n)


def _impulse(T=21, at=10):
    x = np.zeros(T)
    x[at] = 1.0
    return FrameLabels(x, x, np.zeros(T))


def test_n5_impulse_response():
    out = smooth_labels(_impulse(), 5)
    np.testing.assert_allclose(out.onset[8:13], [1 / 3, 2 / 3, 1, 2 / 3, 1 / 3], rtol=1e-15)
    assert np.count_nonzero(out.onset) == 5


def test_smoothing_clips_overlapping_peaks():
    x = np.zeros(10)
    x[[4, 5]] = 1.0
    out = smooth_labels(FrameLabels(x, np.zeros(10), np.zeros(10)), 5)
    assert out.onset.max() == 1.0


def test_activation_untouched():
    labels = notes_to_frames([NoteEvent(0.1, 0.3)], 30)
    out = smooth_labels(labels, 5)
    np.testing.assert_array_equal(out.activation, labels.activation)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=60))
def test_n1_identity(bits):
    x = np.array(bits, dtype=float)
    out = smooth_labels(FrameLabels(x, x[::-1].copy(), x), 1)
    np.testing.assert_array_equal(out.onset, x)
    np.testing.assert_array_equal(out.offset, x[::-1])


@given(st.integers(3, 40), st.sampled_from([1, 3, 5, 7, 9]))
def test_impulse_centre_is_one(at, n):
    out = smooth_labels(_impulse(T=50, at=at), n)
    assert out.onset[at] == 1.0


@pytest.mark.parametrize("t, frame", [(0.0, 0), (0.009, 0), (0.01, 1), (0.2, 10), (0.219, 11), (1.4, 70)])
def test_time_to_frame(t, frame):
    assert time_to_frame(t, 0.02) == frame


def test_notes_to_frames():
    labels = notes_to_frames([NoteEvent(0.2, 0.3), NoteEvent(0.5, 0.6)], 40)
    assert np.flatnonzero(labels.onset).tolist() == [10, 25]
    assert np.flatnonzero(labels.offset).tolist() == [15, 30]
    assert np.flatnonzero(labels.activation).tolist() == list(range(10, 15)) + list(range(25, 30))


def test_offset_at_end_is_clamped():
    labels = notes_to_frames([NoteEvent(0.1, 0.2)], 10)
    assert labels.offset[-1] == 1.0


def test_notes_outside_grid_rejected():
    with pytest.raises(ValueError, match="outside"):
        notes_to_frames([NoteEvent(0.1, 1.0)], 10)


def test_overlap_reports_pair():
    a, b = NoteEvent(0.0, 0.5), NoteEvent(0.4, 0.8)
    with pytest.raises(OverlapError) as err:
        sort_and_check([b, a])
    assert err.value.pair == (a, b)
    assert sort_and_check([NoteEvent(0.5, 0.6), NoteEvent(0.0, 0.5)])[0].onset == 0.0


@pytest.mark.parametrize("args", [(0.5, 0.5), (0.5, 0.4), (0.0, 1.0, 128.0), (0.0, 1.0, -1.0)])
def test_note_validation(args):
    with pytest.raises(ValueError):
        NoteEvent(*args)


def test_note_tsv_round_trip(tmp_path):
    notes = [NoteEvent(0.1, 0.35, 60.25), NoteEvent(1 / 3, 2.0, 61.0)]
    write_notes(tmp_path / "n.tsv", notes)
    assert read_notes(tmp_path / "n.tsv") == notes


def test_unpitched_tsv(tmp_path):
    (tmp_path / "n.tsv").write_text("onset_sec\toffset_sec\n0.5\t1.0\n0.1\t0.2\n")
    assert read_notes(tmp_path / "n.tsv") == [NoteEvent(0.1, 0.2), NoteEvent(0.5, 1.0)]


def test_format_uses_plain_floats():
    text = format_notes([NoteEvent(np.float64(0.1), np.float64(0.2), np.float64(60.0))])
    assert "np." not in text
    assert text.splitlines()[1] == "0.1\t0.2\t60.0"


@pytest.mark.parametrize("body, line", [
    ("onset_sec\toffset_sec\tpitch_midi\n0.1\t0.2\t60\n0.3\tx\t61\n", 3),
    ("onset_sec\toffset_sec\tpitch_midi\n0.4\t0.2\t60\n", 2),
])
def test_bad_rows_name_the_line(tmp_path, body, line):
    (tmp_path / "n.tsv").write_text(body)
    with pytest.raises(FormatError, match=f"n.tsv:{line}:"):
        read_notes(tmp_path / "n.tsv")


def test_missing_header(tmp_path):
    (tmp_path / "n.tsv").write_text("0.1\t0.2\t60\n")
    with pytest.raises(FormatError, match="header"):
        read_notes(tmp_path / "n.tsv")


def test_frame_labels_matrix_round_trip():
    labels = notes_to_frames([NoteEvent(0.2, 0.3)], 20)
    back = FrameLabels.from_matrix(labels.as_matrix())
    np.testing.assert_array_equal(back.activation, labels.activation)
