"""Weekly windowing under a token budget, with gap-aware window extension.

Windows are anchored at the series' first timestamp (not calendar weeks) and
cover the series without overlap; a window whose serialized form would exceed
the token budget is split at its midpoint timestamp, recursively. Windows are
half-open [window_start, window_end).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Iterable, Sequence

from .core import Sample, SoilMoistureSeries, SpadeError, sample_line
from .ingest import Gap

# Serialized characters per token. A weekly 15-minute segment serializes to
# roughly 16.8k characters, putting its estimate near the ~3k-token budget a
# chat backend reports for such data.
CHARS_PER_TOKEN = 5


class BudgetError(SpadeError):
    """The token budget cannot hold even a single sample line."""


@dataclass(frozen=True, slots=True)
class Segment:
    """A contiguous slice of a series: the unit sent to the analysis backend."""

    samples: tuple[Sample, ...]
    window_start: datetime
    window_end: datetime
    token_estimate: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", tuple(self.samples))


def estimate_text_tokens(text: str) -> int:
    return math.ceil(len(text) / CHARS_PER_TOKEN)


def estimate_sample_tokens(samples: Iterable[Sample]) -> int:
    chars = sum(len(sample_line(s)) + 1 for s in samples)  # +1 for newline
    return math.ceil(chars / CHARS_PER_TOKEN)


def estimate_tokens(segment: Segment | Sequence[Sample]) -> int:
    """Deterministic token estimate for a segment's serialized form."""
    samples = segment.samples if isinstance(segment, Segment) else segment
    return estimate_sample_tokens(samples)


def _make_segment(samples: Sequence[Sample], start: datetime, end: datetime) -> Segment:
    return Segment(tuple(samples), start, end, estimate_sample_tokens(samples))


def _split_to_budget(
    samples: Sequence[Sample], start: datetime, end: datetime, budget: int
) -> list[Segment]:
    if not samples:
        return []
    estimate = estimate_sample_tokens(samples)
    if estimate <= budget:
        return [_make_segment(samples, start, end)]
    if len(samples) == 1:
        raise BudgetError(
            f"budget infeasible: one sample line estimates to {estimate} tokens, "
            f"budget is {budget}"
        )
    mid = start + (end - start) / 2
    left = [s for s in samples if s.timestamp < mid]
    right = [s for s in samples if s.timestamp >= mid]
    if not left or not right:
        # Midpoint failed to separate; fall back to an even sample split.
        half = len(samples) // 2
        left, right = samples[:half], samples[half:]
        mid = right[0].timestamp
    return _split_to_budget(left, start, mid, budget) + _split_to_budget(
        right, mid, end, budget
    )


def segment_weekly(
    series: SoilMoistureSeries,
    window_days: int = 7,
    budget: int = 30_000,
) -> list[Segment]:
    """Cut a series into consecutive windows of window_days under the budget.

    The union of the returned segments contains every source sample exactly
    once; windows with no samples produce no segment.
    """
    if window_days < 1:
        raise ValueError("window_days must be >= 1")
    if budget <= 0:
        raise ValueError("budget must be positive")

    window = timedelta(days=window_days)
    segments: list[Segment] = []
    start = series.start
    idx = 0
    n = len(series.samples)
    while idx < n:
        end = start + window
        chunk = []
        while idx < n and series.samples[idx].timestamp < end:
            chunk.append(series.samples[idx])
            idx += 1
        segments.extend(_split_to_budget(chunk, start, end, budget))
        start = end
    return segments


def extend_for_gaps(segments: list[Segment], gaps: list[Gap]) -> list[Segment]:
    """Merge neighboring segments so each gap lies entirely inside one segment.

    A gap straddles a segment boundary when its bounding samples fall in
    different segments; all segments between them are merged into one.
    """
    if not segments or not gaps:
        return list(segments)

    def locate(ts: datetime) -> int | None:
        for i, seg in enumerate(merged):
            if seg.samples and seg.samples[0].timestamp <= ts <= seg.samples[-1].timestamp:
                return i
        return None

    merged = list(segments)
    for gap in sorted(gaps, key=lambda g: g.before):
        lo = locate(gap.before)
        hi = locate(gap.after)
        if lo is None or hi is None or lo == hi:
            continue
        group = merged[lo : hi + 1]
        samples = tuple(s for seg in group for s in seg.samples)
        merged[lo : hi + 1] = [
            _make_segment(samples, group[0].window_start, group[-1].window_end)
        ]
    return merged
