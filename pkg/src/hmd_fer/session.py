"""Per-frame emotion timelines for a gameplay session and their comparison
with the player's post-session Likert self-report."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .dataset import LABEL_NAMES, NUM_CLASSES, EmotionLabel, FrameRecord, SelfReport
from .occlusion import MaskSpec
from .training import Classifier

DEFAULT_WINDOW = 5
DEFAULT_PRESENCE = 0.05
DEFAULT_LIKERT = 3


@dataclass
class EmotionTimeline:
    timestamps: np.ndarray  # int64 ms
    raw: np.ndarray  # int labels
    smoothed: np.ndarray
    confidence: np.ndarray
    game_id: str = ""
    participant_id: str = ""

    def __post_init__(self):
        if not (len(self.timestamps) == len(self.raw) == len(self.smoothed) == len(self.confidence)):
            raise ValueError("timeline columns differ in length")
        if np.any(np.diff(self.timestamps) < 0):
            raise ValueError("timeline timestamps decrease")

    def __len__(self):
        return len(self.raw)

    @property
    def duration_ms(self) -> int:
        return int(self.timestamps[-1] - self.timestamps[0]) if len(self) else 0


def smooth_timeline(raw, window: int = DEFAULT_WINDOW) -> np.ndarray:
    """Centered sliding majority vote, truncated at the ends.

    The vote at position ``i`` counts the already smoothed labels to the left
    of ``i`` and the raw labels from ``i`` rightwards. On a tie the previous
    smoothed label is kept (the raw label at the first position).
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 1, got {window}")
    raw = np.asarray(raw, dtype=np.int64)
    n = len(raw)
    half = window // 2
    out = raw.copy()
    for i in range(n):
        lo, hi = max(0, i - half), min(n, i + half + 1)
        votes = np.bincount(np.concatenate([out[lo:i], raw[i:hi]]), minlength=NUM_CLASSES)
        top = np.flatnonzero(votes == votes.max())
        if len(top) == 1:
            out[i] = top[0]
        else:
            out[i] = out[i - 1] if i > 0 else raw[0]
    return out


def predict_session(model, frames: list[FrameRecord], mask: MaskSpec | None = None,
                    window: int = DEFAULT_WINDOW, game_id: str = "",
                    participant_id: str = "") -> EmotionTimeline:
    """Label every frame with the single-image predictor, then smooth.

    ``model`` is a :class:`~hmd_fer.training.Classifier` or a checkpoint.
    """
    if not frames:
        raise ValueError("session has no frames")
    clf = model if isinstance(model, Classifier) else Classifier(model)
    labels, conf = [], []
    for fr in frames:
        p = clf.predict(fr.image, mask)
        labels.append(int(p.label))
        conf.append(p.confidence)
    raw = np.array(labels, dtype=np.int64)
    return EmotionTimeline(
        timestamps=np.array([fr.timestamp_ms for fr in frames], dtype=np.int64),
        raw=raw,
        smoothed=smooth_timeline(raw, window),
        confidence=np.array(conf),
        game_id=game_id,
        participant_id=participant_id,
    )


def annotate_frames(frames: list[FrameRecord], timeline: EmotionTimeline,
                    smoothed: bool = False) -> list[FrameRecord]:
    """Copies of ``frames`` with the label/confidence columns filled in."""
    labels = timeline.smoothed if smoothed else timeline.raw
    return [FrameRecord(fr.frame_index, fr.timestamp_ms, fr.image,
                        (EmotionLabel(int(k)), round(float(c), 4)))
            for fr, k, c in zip(frames, labels, timeline.confidence)]


@dataclass
class SessionSummary:
    fractions: np.ndarray  # per label code, sums to 1
    detected: frozenset
    dominant: EmotionLabel
    episodes: np.ndarray  # maximal runs per label code


def summarize(timeline: EmotionTimeline, presence_threshold: float = DEFAULT_PRESENCE) -> SessionSummary:
    seq = np.asarray(timeline.smoothed, dtype=np.int64)
    if len(seq) == 0:
        raise ValueError("empty timeline")
    fractions = np.bincount(seq, minlength=NUM_CLASSES) / len(seq)
    starts = np.concatenate([[True], seq[1:] != seq[:-1]])
    episodes = np.bincount(seq[starts], minlength=NUM_CLASSES)
    detected = frozenset(EmotionLabel(k) for k in np.flatnonzero(fractions >= presence_threshold))
    return SessionSummary(fractions, detected, EmotionLabel(int(np.argmax(fractions))), episodes)


@dataclass
class AgreementReport:
    declared: frozenset
    detected: frozenset
    precision: Optional[float]  # None when undefined (empty denominator)
    recall: Optional[float]
    f1: Optional[float]
    spearman: Optional[float]  # None when either vector is constant
    undefined: tuple = field(default_factory=tuple)


def spearman(a, b) -> Optional[float]:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return None
    return float(stats.spearmanr(a, b).statistic)


def compare_with_report(summary: SessionSummary, report: SelfReport,
                        likert_threshold: int = DEFAULT_LIKERT) -> AgreementReport:
    declared = frozenset(e for e, r in report.ratings.items() if r >= likert_threshold)
    detected = frozenset(summary.detected)
    hit = len(declared & detected)
    precision = hit / len(detected) if detected else None
    recall = hit / len(declared) if declared else None
    if precision is None or recall is None:
        f1 = None
    elif precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    rho = spearman(report.vector(), summary.fractions)
    undefined = tuple(name for name, v in
                      (("precision", precision), ("recall", recall), ("f1", f1), ("spearman", rho))
                      if v is None)
    return AgreementReport(declared, detected, precision, recall, f1, rho, undefined)


def _fmt_set(s) -> str:
    return ";".join(e.canonical for e in sorted(s))


def _fmt(v) -> str:
    return "undefined" if v is None else f"{v:.4f}"


def format_report(summary: SessionSummary, agreement: AgreementReport | None = None) -> str:
    """``emotion,fraction,episodes`` table, then an agreement block if given."""
    buf = io.StringIO()
    buf.write("emotion,fraction,episodes\n")
    for k, name in enumerate(LABEL_NAMES):
        buf.write(f"{name},{summary.fractions[k]:.6f},{summary.episodes[k]}\n")
    if agreement is not None:
        buf.write("\ndeclared,detected,precision,recall,f1,spearman\n")
        buf.write(",".join([_fmt_set(agreement.declared), _fmt_set(agreement.detected),
                            _fmt(agreement.precision), _fmt(agreement.recall),
                            _fmt(agreement.f1), _fmt(agreement.spearman)]) + "\n")
    return buf.getvalue()
