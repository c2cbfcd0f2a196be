"""Black-rectangle occlusion of the eyes-and-eyebrows region of face crops."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import IMAGE_SIDE, DatasetError, LabeledExample, _lines

log = logging.getLogger(__name__)

DEFAULT_BAND_ROWS = (12, 28)
DEFAULT_BAND_COLS = (0, IMAGE_SIDE)
RECTS_HEADER = "index,row_start,row_end,col_start,col_end"


@dataclass(frozen=True)
class MaskSpec:
    """Half-open ``(row_start, row_end, col_start, col_end)`` rectangles."""

    rectangles: tuple[tuple[int, int, int, int], ...]
    fill_value: int = 0

    def __post_init__(self):
        rects = tuple(tuple(int(v) for v in r) for r in self.rectangles)
        if not rects:
            raise ValueError("a mask needs at least one rectangle")
        for r in rects:
            if len(r) != 4:
                raise ValueError(f"rectangle {r} must have 4 coordinates")
            r0, r1, c0, c1 = r
            if not (0 <= r0 < r1 <= IMAGE_SIDE and 0 <= c0 < c1 <= IMAGE_SIDE):
                raise ValueError(f"rectangle {r} is not inside [0,{IMAGE_SIDE})^2")
        object.__setattr__(self, "rectangles", rects)

    def boolean(self) -> np.ndarray:
        """48x48 boolean array, True where pixels are blacked out."""
        m = np.zeros((IMAGE_SIDE, IMAGE_SIDE), dtype=bool)
        for r0, r1, c0, c1 in self.rectangles:
            m[r0:r1, c0:c1] = True
        return m

    def area(self) -> int:
        return int(self.boolean().sum())


def default_band_mask(rows=DEFAULT_BAND_ROWS, cols=DEFAULT_BAND_COLS) -> MaskSpec:
    """Full-width horizontal band over the eyes and eyebrows (rows 12-27)."""
    return MaskSpec(((rows[0], rows[1], cols[0], cols[1]),))


def parse_span(text: str) -> tuple[int, int]:
    """``"12:28"`` -> ``(12, 28)``."""
    try:
        a, b = text.split(":")
        return int(a), int(b)
    except ValueError:
        raise ValueError(f"expected A:B, got {text!r}") from None


def apply_mask(image: np.ndarray, spec: MaskSpec) -> np.ndarray:
    out = np.array(image, copy=True)
    for r0, r1, c0, c1 in spec.rectangles:
        out[..., r0:r1, c0:c1] = spec.fill_value
    return out


def parse_rects_file(source) -> dict[int, MaskSpec]:
    """Per-image rectangles from a detector, keyed by example index."""
    lines = _lines(source)
    if not lines or lines[0].strip() != RECTS_HEADER:
        raise DatasetError(f"bad header, expected {RECTS_HEADER!r}", 1)
    rects: dict[int, list] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            idx, *coords = (int(v) for v in line.strip().split(","))
        except ValueError:
            raise DatasetError("expected 5 integers", lineno) from None
        if len(coords) != 4:
            raise DatasetError("expected 5 integers", lineno)
        try:
            MaskSpec((tuple(coords),))
        except ValueError as exc:
            raise DatasetError(f"index {idx}: {exc}", lineno) from None
        rects.setdefault(idx, []).append(tuple(coords))
    return {i: MaskSpec(tuple(r)) for i, r in rects.items()}


@dataclass
class MaskReport:
    total: int = 0
    masked: int = 0
    skipped: int = 0
    defaulted: int = 0
    skipped_indices: list = field(default_factory=list)

    def __str__(self):
        s = f"masked {self.masked} of {self.total} images, skipped {self.skipped}"
        if self.defaulted:
            s += f" ({self.defaulted} fell back to the default band)"
        return s


def mask_dataset(examples: list[LabeledExample], spec_source=None,
                 policy: str = "default") -> tuple[list[LabeledExample], MaskReport]:
    """Mask every example, keeping label, split and order.

    ``spec_source`` is a single :class:`MaskSpec` applied uniformly (default:
    the eye band) or a mapping from example index to :class:`MaskSpec`. For a
    mapping, images without an entry either get the default band
    (``policy="default"``) or are dropped (``policy="skip"``).
    """
    if policy not in ("default", "skip"):
        raise ValueError(f"unknown policy {policy!r}")
    if spec_source is None:
        spec_source = default_band_mask()
    report = MaskReport(total=len(examples))
    out = []
    if isinstance(spec_source, MaskSpec):
        for ex in examples:
            out.append(LabeledExample(apply_mask(ex.image, spec_source), ex.label, ex.split))
        report.masked = len(out)
        return out, report

    band = default_band_mask()
    for i, ex in enumerate(examples):
        spec = spec_source.get(i)
        if spec is None:
            if policy == "skip":
                report.skipped += 1
                report.skipped_indices.append(i)
                continue
            spec = band
            report.defaulted += 1
        out.append(LabeledExample(apply_mask(ex.image, spec), ex.label, ex.split))
    report.masked = len(out)
    if examples and not out:
        log.warning("rectangles file covers none of the %d images; output is empty",
                    len(examples))
    return out, report
