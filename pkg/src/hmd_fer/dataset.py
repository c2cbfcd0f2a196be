"""Readers and writers for the FER2013 pixel CSV, session frame CSVs, binary
PGM frames and Likert self-report forms, plus stratified subsetting.

All CSV writers emit a canonical form (LF line endings, single spaces between
pixels, no trailing whitespace) so that ``parse(write(x)) == x`` and writing a
parsed canonical file reproduces it byte for byte.
"""

from __future__ import annotations

import enum
import io
import logging
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

log = logging.getLogger(__name__)

IMAGE_SIDE = 48
IMAGE_PIXELS = IMAGE_SIDE * IMAGE_SIDE

FER_HEADER = "emotion,pixels,Usage"
FRAMES_HEADER = "frame,timestamp_ms,pixels,label,confidence"
REPORT_HEADER = "emotion,rating"

USAGE_TO_SPLIT = {"Training": "train", "PublicTest": "val", "PrivateTest": "test"}
SPLIT_TO_USAGE = {v: k for k, v in USAGE_TO_SPLIT.items()}


class EmotionLabel(enum.IntEnum):
    ANGRY = 0
    DISGUST = 1
    FEAR = 2
    HAPPY = 3
    SAD = 4
    SURPRISE = 5
    NEUTRAL = 6

    @property
    def canonical(self) -> str:
        return self.name.lower()

    @classmethod
    def from_name(cls, name: str) -> "EmotionLabel":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown emotion {name!r}") from None


NUM_CLASSES = len(EmotionLabel)
LABEL_NAMES = tuple(e.canonical for e in EmotionLabel)


class DatasetError(ValueError):
    """Malformed input; ``row`` is the 1-based line number when known."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(f"row {row}: {message}" if row is not None else message)
        self.row = row


def _as_image(pixels) -> np.ndarray:
    img = np.asarray(pixels)
    if img.size != IMAGE_PIXELS:
        raise DatasetError(f"expected {IMAGE_PIXELS} pixels, got {img.size}")
    if img.dtype != np.uint8:
        if img.min() < 0 or img.max() > 255:
            raise DatasetError("pixel values must be in 0..255")
        img = img.astype(np.uint8)
    return img.reshape(IMAGE_SIDE, IMAGE_SIDE)


@dataclass(eq=False)
class LabeledExample:
    image: np.ndarray  # uint8 [48, 48]
    label: EmotionLabel
    split: str = "train"

    def __post_init__(self):
        self.image = _as_image(self.image)
        self.label = EmotionLabel(self.label)
        if self.split not in SPLIT_TO_USAGE:
            raise DatasetError(f"unknown split {self.split!r}")

    def __eq__(self, other):
        if not isinstance(other, LabeledExample):
            return NotImplemented
        return (self.label == other.label and self.split == other.split
                and np.array_equal(self.image, other.image))


@dataclass(eq=False)
class FrameRecord:
    frame_index: int
    timestamp_ms: int
    image: np.ndarray
    predicted: Optional[tuple[EmotionLabel, float]] = None

    def __post_init__(self):
        self.image = _as_image(self.image)
        if self.frame_index < 0 or self.timestamp_ms < 0:
            raise DatasetError("frame index and timestamp must be non-negative")
        if self.predicted is not None:
            label, conf = self.predicted
            if not 0.0 <= conf <= 1.0:
                raise DatasetError(f"confidence {conf} outside [0, 1]")
            self.predicted = (EmotionLabel(label), float(conf))

    def __eq__(self, other):
        if not isinstance(other, FrameRecord):
            return NotImplemented
        return (self.frame_index == other.frame_index
                and self.timestamp_ms == other.timestamp_ms
                and self.predicted == other.predicted
                and np.array_equal(self.image, other.image))


@dataclass
class SelfReport:
    ratings: dict  # EmotionLabel -> 1..5
    game_id: str = ""
    participant_id: str = ""

    def __post_init__(self):
        ratings = {EmotionLabel(k): int(v) for k, v in self.ratings.items()}
        missing = [e.canonical for e in EmotionLabel if e not in ratings]
        if missing:
            raise DatasetError(f"self-report missing emotion(s): {', '.join(missing)}")
        for e, r in ratings.items():
            if not 1 <= r <= 5:
                raise DatasetError(f"rating for {e.canonical} must be 1..5, got {r}")
        self.ratings = {e: ratings[e] for e in EmotionLabel}

    def vector(self) -> np.ndarray:
        return np.array([self.ratings[e] for e in EmotionLabel])


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _read_bytes(source) -> bytes:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source)
    if isinstance(source, (str, os.PathLike)):
        return Path(source).read_bytes()
    data = source.read()
    return data.encode() if isinstance(data, str) else data


def _lines(source) -> list[str]:
    text = _read_bytes(source).decode("utf-8-sig")
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    return lines


def _emit(text: str, dest):
    data = text.encode("utf-8")
    if dest is None:
        return data
    if isinstance(dest, (str, os.PathLike)):
        Path(dest).write_bytes(data)
    else:
        dest.write(data)
    return data


def _parse_pixels(field: str, row: int) -> np.ndarray:
    parts = field.split()
    if len(parts) != IMAGE_PIXELS:
        raise DatasetError(f"expected {IMAGE_PIXELS} pixels, got {len(parts)}", row)
    try:
        vals = np.array(parts, dtype=np.int64)
    except ValueError:
        raise DatasetError("non-integer pixel value", row) from None
    if vals.min() < 0 or vals.max() > 255:
        raise DatasetError("pixel value outside 0..255", row)
    return vals.astype(np.uint8).reshape(IMAGE_SIDE, IMAGE_SIDE)


def _format_pixels(image: np.ndarray) -> str:
    return " ".join(map(str, image.ravel().tolist()))


# --------------------------------------------------------------------------
# FER2013 CSV
# --------------------------------------------------------------------------

def parse_fer_csv(source, strict: bool = True, errors: list | None = None) -> list[LabeledExample]:
    """Parse a FER2013 ``emotion,pixels,Usage`` CSV.

    ``source`` may be bytes, a path or a binary file object. In strict mode the
    first malformed row raises :class:`DatasetError`; otherwise malformed rows
    are logged, skipped and appended to ``errors`` when a list is supplied.
    """
    lines = _lines(source)
    if not lines or lines[0].strip() != FER_HEADER:
        raise DatasetError(f"bad header, expected {FER_HEADER!r}", 1)
    out = []
    skipped = 0
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            fields = line.rstrip("\r").split(",")
            if len(fields) != 3:
                raise DatasetError(f"expected 3 fields, got {len(fields)}", lineno)
            label_s, pix_s, usage = fields
            try:
                label = int(label_s)
            except ValueError:
                raise DatasetError(f"bad label {label_s!r}", lineno) from None
            if not 0 <= label < NUM_CLASSES:
                raise DatasetError(f"label {label} outside 0..{NUM_CLASSES - 1}", lineno)
            split = USAGE_TO_SPLIT.get(usage.strip())
            if split is None:
                raise DatasetError(f"unknown usage {usage!r}", lineno)
            out.append(LabeledExample(_parse_pixels(pix_s, lineno), EmotionLabel(label), split))
        except DatasetError as exc:
            if strict:
                raise
            skipped += 1
            log.warning("skipping %s", exc)
            if errors is not None:
                errors.append(exc)
    log.info("parsed %d examples (%d skipped)", len(out), skipped)
    return out


def write_fer_csv(examples: Iterable[LabeledExample], dest=None) -> bytes:
    """Canonical FER2013 CSV; returned as bytes and written to ``dest`` if given."""
    buf = io.StringIO()
    buf.write(FER_HEADER + "\n")
    for ex in examples:
        buf.write(f"{int(ex.label)},{_format_pixels(ex.image)},{SPLIT_TO_USAGE[ex.split]}\n")
    return _emit(buf.getvalue(), dest)


def to_arrays(examples: list[LabeledExample]) -> tuple[np.ndarray, np.ndarray]:
    """Stack into ``(images uint8 [N, 48, 48], labels int64 [N])``."""
    if not examples:
        return np.zeros((0, IMAGE_SIDE, IMAGE_SIDE), np.uint8), np.zeros(0, np.int64)
    return (np.stack([ex.image for ex in examples]),
            np.array([int(ex.label) for ex in examples], dtype=np.int64))


def by_split(examples: list[LabeledExample], split: str) -> list[LabeledExample]:
    return [ex for ex in examples if ex.split == split]


# --------------------------------------------------------------------------
# stratification / statistics
# --------------------------------------------------------------------------

def class_histogram(examples) -> np.ndarray:
    """Count of examples per label code (length-7 int array)."""
    labels = [int(ex.label) for ex in examples]
    return np.bincount(np.asarray(labels, dtype=np.int64), minlength=NUM_CLASSES)


def stratified_subset(examples: list[LabeledExample], per_class_count: int,
                      seed: int) -> list[LabeledExample]:
    """Exactly ``per_class_count`` examples of every label, drawn by a seeded
    shuffle within each class. The result keeps the input order."""
    rng = np.random.default_rng(seed)
    labels = np.array([int(ex.label) for ex in examples], dtype=np.int64)
    chosen = []
    for code in range(NUM_CLASSES):
        idx = np.flatnonzero(labels == code)
        if len(idx) < per_class_count:
            raise DatasetError(
                f"class {EmotionLabel(code).canonical} has {len(idx)} examples, "
                f"{per_class_count} requested")
        chosen.append(rng.permutation(idx)[:per_class_count])
    keep = np.sort(np.concatenate(chosen)) if chosen else []
    return [examples[i] for i in keep]


# --------------------------------------------------------------------------
# PGM frames
# --------------------------------------------------------------------------

_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def read_pgm(source) -> np.ndarray:
    """Decode a binary ``P5`` PGM with maxval 255 into a uint8 [H, W] array."""
    data = _read_bytes(source)
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PGM_TOKEN.match(data, pos)
        if not m:
            raise DatasetError("truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise DatasetError(f"not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise DatasetError("non-numeric PGM header field") from None
    if maxval != 255:
        raise DatasetError(f"unsupported PGM maxval {maxval}")
    if width < 1 or height < 1:
        raise DatasetError("PGM dimensions must be positive")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise DatasetError("truncated PGM header")
    pos += 1
    payload = data[pos:pos + width * height]
    if len(payload) != width * height:
        raise DatasetError(f"truncated PGM payload: {len(payload)} of {width * height} bytes")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(image: np.ndarray, dest=None) -> bytes:
    img = np.asarray(image, dtype=np.uint8)
    h, w = img.shape
    data = f"P5\n{w} {h}\n255\n".encode() + img.tobytes()
    if dest is None:
        return data
    if isinstance(dest, (str, os.PathLike)):
        Path(dest).write_bytes(data)
    else:
        dest.write(data)
    return data


def resize_bilinear(image: np.ndarray, size: int = IMAGE_SIDE) -> np.ndarray:
    """Bilinear resample to ``size`` x ``size`` with corner-aligned sampling.

    Output sample ``i`` reads source coordinate ``i * (in - 1) / (size - 1)``;
    results are rounded half-up and clamped to 0..255.
    """
    src = np.asarray(image, dtype=np.float64)
    if src.ndim != 2:
        raise DatasetError(f"expected a 2-D grayscale image, got shape {src.shape}")
    h, w = src.shape

    def axis(n_in):
        if n_in == 1 or size == 1:
            pos = np.zeros(size)
        else:
            pos = np.arange(size) * ((n_in - 1) / (size - 1))
        lo = np.minimum(np.floor(pos).astype(np.int64), n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis(h)
    x0, x1, fx = axis(w)
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy[:, None]) + bot * fy[:, None]
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


_FRAME_NAME = re.compile(r"frame_(\d{6,})_(\d+)\.pgm$")


def read_frames_dir(path) -> list[FrameRecord]:
    """Load ``frame_%06d_<timestamp_ms>.pgm`` files, resized to 48x48."""
    found = []
    for p in Path(path).iterdir():
        m = _FRAME_NAME.match(p.name)
        if m:
            found.append((int(m.group(1)), int(m.group(2)), p))
    if not found:
        raise DatasetError(f"no frame_*.pgm files in {path}")
    found.sort()
    frames = []
    for idx, ts, p in found:
        img = read_pgm(p)
        if img.shape != (IMAGE_SIDE, IMAGE_SIDE):
            img = resize_bilinear(img)
        frames.append(FrameRecord(idx, ts, img))
    _check_frame_order(frames)
    return frames


# --------------------------------------------------------------------------
# frames CSV
# --------------------------------------------------------------------------

def _check_frame_order(frames):
    for prev, cur in zip(frames, frames[1:]):
        if cur.frame_index <= prev.frame_index:
            raise DatasetError(f"frame index {cur.frame_index} does not increase "
                               f"(previous {prev.frame_index})")
        if cur.timestamp_ms < prev.timestamp_ms:
            raise DatasetError(f"timestamp {cur.timestamp_ms} decreases at frame {cur.frame_index}")


def parse_frames_csv(source) -> list[FrameRecord]:
    lines = _lines(source)
    if not lines or lines[0].strip() != FRAMES_HEADER:
        raise DatasetError(f"bad header, expected {FRAMES_HEADER!r}", 1)
    frames = []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.rstrip("\r").split(",")
        if len(fields) != 5:
            raise DatasetError(f"expected 5 fields, got {len(fields)}", lineno)
        idx_s, ts_s, pix_s, lab_s, conf_s = fields
        try:
            idx, ts = int(idx_s), int(ts_s)
        except ValueError:
            raise DatasetError("frame and timestamp_ms must be integers", lineno) from None
        predicted = None
        if lab_s.strip() or conf_s.strip():
            try:
                label, conf = int(lab_s), float(conf_s)
            except ValueError:
                raise DatasetError("label/confidence must both be present and numeric",
                                   lineno) from None
            if not 0 <= label < NUM_CLASSES:
                raise DatasetError(f"label {label} outside 0..{NUM_CLASSES - 1}", lineno)
            predicted = (EmotionLabel(label), conf)
        try:
            frames.append(FrameRecord(idx, ts, _parse_pixels(pix_s, lineno), predicted))
        except DatasetError as exc:
            raise DatasetError(str(exc), lineno) from None
    try:
        _check_frame_order(frames)
    except DatasetError as exc:
        raise DatasetError(str(exc)) from None
    return frames


def write_frames_csv(frames: Iterable[FrameRecord], dest=None) -> bytes:
    frames = list(frames)
    _check_frame_order(frames)
    buf = io.StringIO()
    buf.write(FRAMES_HEADER + "\n")
    for fr in frames:
        if fr.predicted is None:
            tail = ","
        else:
            tail = f"{int(fr.predicted[0])},{fr.predicted[1]:.4f}"
        buf.write(f"{fr.frame_index},{fr.timestamp_ms},{_format_pixels(fr.image)},{tail}\n")
    return _emit(buf.getvalue(), dest)


# --------------------------------------------------------------------------
# self-report CSV
# --------------------------------------------------------------------------

def parse_self_report(source, game_id: str = "", participant_id: str = "") -> SelfReport:
    lines = _lines(source)
    if not lines or lines[0].strip() != REPORT_HEADER:
        raise DatasetError(f"bad header, expected {REPORT_HEADER!r}", 1)
    ratings = {}
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.strip().split(",")
        if len(fields) != 2:
            raise DatasetError(f"expected 2 fields, got {len(fields)}", lineno)
        name, rating_s = fields
        if name not in LABEL_NAMES:
            raise DatasetError(f"unknown emotion {name!r}", lineno)
        emo = EmotionLabel.from_name(name)
        if emo in ratings:
            raise DatasetError(f"duplicate emotion {name!r}", lineno)
        try:
            rating = int(rating_s)
        except ValueError:
            raise DatasetError(f"bad rating {rating_s!r}", lineno) from None
        if not 1 <= rating <= 5:
            raise DatasetError(f"rating for {name} must be 1..5, got {rating}", lineno)
        ratings[emo] = rating
    return SelfReport(ratings, game_id=game_id, participant_id=participant_id)


def write_self_report(report: SelfReport, dest=None) -> bytes:
    body = "".join(f"{e.canonical},{report.ratings[e]}\n" for e in EmotionLabel)
    return _emit(REPORT_HEADER + "\n" + body, dest)
