import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmd_fer.dataset import EmotionLabel as E, FrameRecord, SelfReport, parse_frames_csv, \
    write_frames_csv
from hmd_fer.session import (EmotionTimeline, annotate_frames, compare_with_report, format_report,
                             predict_session, smooth_timeline, spearman, summarize)
from hmd_fer.training import Classifier

H, N = int(E.HAPPY), int(E.NEUTRAL)


def timeline(labels):
    n = len(labels)
    raw = np.asarray(labels)
    return EmotionTimeline(np.arange(n) * 1000, raw, raw.copy(), np.ones(n))


def report(**ratings):
    full = {e: 1 for e in E}
    full.update({E.from_name(k): v for k, v in ratings.items()})
    return SelfReport(full)


def summary_with(detected, fractions=None):
    s = summarize(timeline([N]))
    s.detected = frozenset(detected)
    if fractions is not None:
        s.fractions = np.asarray(fractions, float)
    return s


# -- smoothing -------------------------------------------------------------

def test_window_one_is_identity():
    raw = [0, 3, 3, 6, 1]
    assert smooth_timeline(raw, 1).tolist() == raw


def test_happy_happy_neutral():
    assert smooth_timeline([H, H, N], 3).tolist() == [H, H, H]


def test_alternating_becomes_constant():
    a, b = 2, 5
    out = smooth_timeline([a, b] * 6, 3)
    assert out.tolist() == [a] * 12


def test_single_flicker_removed():
    assert smooth_timeline([N, N, H, N, N], 3).tolist() == [N] * 5


def test_even_window_rejected():
    with pytest.raises(ValueError):
        smooth_timeline([1, 2], 4)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=40), st.sampled_from([1, 3, 5, 7]))
def test_smoothing_only_uses_labels_from_window(raw, w):
    out = smooth_timeline(raw, w)
    half = w // 2
    assert len(out) == len(raw)
    for i, v in enumerate(out):
        assert v in raw[max(0, i - half):i + half + 1] or v in out[max(0, i - half):i].tolist()
        assert v in raw  # never invents a label


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 6), st.integers(1, 30), st.sampled_from([1, 3, 5]))
def test_constant_sequence_fixed(label, n, w):
    assert smooth_timeline([label] * n, w).tolist() == [label] * n


# -- summary ---------------------------------------------------------------

def test_all_neutral_summary():
    s = summarize(timeline([N] * 10))
    assert s.fractions[N] == 1.0 and s.fractions.sum() == 1.0
    assert s.detected == {E.NEUTRAL} and s.dominant == E.NEUTRAL
    assert s.episodes[N] == 1


def test_half_happy_half_neutral():
    s = summarize(timeline([H] * 5 + [N] * 5))
    assert s.detected == {E.HAPPY, E.NEUTRAL}
    assert s.dominant == E.HAPPY  # tie goes to the lower code


def test_threshold_one_boundary():
    assert summarize(timeline([N] * 4), 1.0).detected == {E.NEUTRAL}
    assert summarize(timeline([N] * 3 + [H]), 1.0).detected == frozenset()


def test_episode_counts():
    s = summarize(timeline([H, H, N, H, 0, 0, H]))
    assert s.episodes[H] == 3 and s.episodes[N] == 1 and s.episodes[0] == 1


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=60),
       st.floats(0, 1), st.floats(0, 1))
def test_fractions_and_threshold_monotonicity(labels, t1, t2):
    lo, hi = sorted((t1, t2))
    a, b = summarize(timeline(labels), lo), summarize(timeline(labels), hi)
    assert abs(a.fractions.sum() - 1) <= 1e-9
    assert b.detected <= a.detected


def test_timeline_validation():
    with pytest.raises(ValueError):
        EmotionTimeline(np.array([2, 1]), np.array([0, 0]), np.array([0, 0]), np.ones(2))
    with pytest.raises(ValueError):
        EmotionTimeline(np.array([1]), np.array([0, 0]), np.array([0, 0]), np.ones(2))


# -- agreement -------------------------------------------------------------

def test_perfect_agreement():
    ag = compare_with_report(summary_with({E.HAPPY, E.NEUTRAL}), report(happy=5, neutral=4))
    assert ag.declared == {E.HAPPY, E.NEUTRAL}
    assert (ag.precision, ag.recall, ag.f1) == (1.0, 1.0, 1.0)


def test_anger_goes_undetected():
    ag = compare_with_report(summary_with({E.FEAR, E.NEUTRAL, E.SURPRISE}),
                             report(angry=4, fear=5, surprise=4, neutral=3))
    assert ag.precision == 1.0 and ag.recall == 0.75
    assert ag.f1 == pytest.approx(2 * 0.75 / 1.75)


def test_empty_declared_set_is_undefined():
    ag = compare_with_report(summary_with({E.NEUTRAL}), report())
    assert ag.declared == frozenset()
    assert ag.recall is None and ag.f1 is None and "recall" in ag.undefined
    assert ag.precision == 0.0


def test_spearman_undefined_for_constant():
    assert spearman([1] * 7, np.arange(7)) is None
    assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert spearman([1, 2, 2, 3], [1, 2, 3, 4]) == pytest.approx(0.9486832980505138)


@settings(max_examples=100, deadline=None)
@given(st.sets(st.integers(0, 6), min_size=1), st.lists(st.integers(1, 5), min_size=7,
                                                        max_size=7), st.permutations(range(7)))
def test_agreement_symmetric_under_relabeling(detected, ratings, perm):
    s1 = summary_with({E(k) for k in detected})
    r1 = SelfReport({E(k): ratings[k] for k in range(7)})
    s2 = summary_with({E(perm[k]) for k in detected})
    r2 = SelfReport({E(perm[k]): ratings[k] for k in range(7)})
    a, b = compare_with_report(s1, r1), compare_with_report(s2, r2)
    assert b.declared == {E(perm[int(e)]) for e in a.declared}
    assert (a.precision, a.recall, a.f1) == (b.precision, b.recall, b.f1)


def test_format_report():
    s = summarize(timeline([H] * 5 + [N] * 5))
    ag = compare_with_report(s, report(happy=5, neutral=4))
    text = format_report(s, ag)
    lines = text.splitlines()
    assert lines[0] == "emotion,fraction,episodes"
    assert "happy,0.500000,1" in lines
    assert "declared,detected,precision,recall,f1,spearman" in lines
    assert lines[-1].startswith("happy;neutral,happy;neutral,1.0000,1.0000,1.0000,")
    undefined = format_report(s, compare_with_report(s, report()))
    assert "undefined" in undefined.splitlines()[-1]


# -- prediction over frames -----------------------------------------------

def test_single_frame_session(quick_checkpoint, faces):
    tl = predict_session(quick_checkpoint, [FrameRecord(0, 0, faces[0].image)])
    assert len(tl) == 1 and tl.smoothed.tolist() == tl.raw.tolist()
    assert tl.duration_ms == 0


def test_identical_frames_identical_labels(quick_checkpoint, faces):
    frames = [FrameRecord(i, i * 1000, faces[3].image) for i in range(6)]
    tl = predict_session(quick_checkpoint, frames)
    assert len(set(tl.raw.tolist())) == 1
    assert len(set(tl.confidence.tolist())) == 1


def test_session_equals_per_frame_predict(quick_checkpoint, faces):
    clf = Classifier(quick_checkpoint)
    frames = [FrameRecord(i, i * 500, ex.image) for i, ex in enumerate(faces[:20])]
    tl = predict_session(clf, frames, window=3)
    for fr, k, c in zip(frames, tl.raw, tl.confidence):
        p = clf.predict(fr.image)
        assert int(p.label) == k and p.confidence == c
    assert tl.duration_ms == 19 * 500


def test_empty_session_rejected(quick_checkpoint):
    with pytest.raises(ValueError):
        predict_session(quick_checkpoint, [])


def test_annotated_frames_round_trip(quick_checkpoint, faces):
    frames = [FrameRecord(i, i * 1000, ex.image) for i, ex in enumerate(faces[:5])]
    tl = predict_session(quick_checkpoint, frames)
    out = annotate_frames(frames, tl)
    assert all(f.predicted is not None for f in out)
    assert parse_frames_csv(write_frames_csv(out)) == out
    assert all(f.predicted is None for f in frames)  # inputs untouched
