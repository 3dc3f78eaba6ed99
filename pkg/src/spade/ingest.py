"""CSV parsing into validated series, plus data-gap location.

The file format: UTF-8 text, header line `timestamp,moisture`, one sample per
line as `YYYY-MM-DD HH:MM:SS,<decimal>`. Lines starting with `#` are comments.
Rows must already be chronological; out-of-order or duplicate timestamps are
rejected rather than silently sorted, since reordering could mask sensor
faults.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime, timedelta

from .core import (
    Sample,
    SeriesMeta,
    SoilMoistureSeries,
    SpadeError,
    TIMESTAMP_FORMAT,
    sample_line,
)

HEADER = "timestamp,moisture"

_TIMESTAMP_RE = re.compile(r"^\d{4}-\d{2}-\d{2} \d{2}:\d{2}:\d{2}$")


class CsvError(SpadeError):
    """A malformed input file; carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"{message}, line {line}")
        self.line = line


@dataclass(frozen=True, slots=True)
class Gap:
    """A hole in the data between two recorded samples."""

    before: datetime
    after: datetime
    missing_span: timedelta


def parse_timestamp(text: str) -> datetime:
    """Strict `YYYY-MM-DD HH:MM:SS` parse; anything else is an error."""
    if not _TIMESTAMP_RE.match(text):
        raise ValueError(f"malformed timestamp {text!r}")
    try:
        return datetime.strptime(text, TIMESTAMP_FORMAT)
    except ValueError:
        raise ValueError(f"malformed timestamp {text!r}") from None


def parse_csv(data: bytes | str, meta: SeriesMeta) -> SoilMoistureSeries:
    """Parse sensor CSV text into a series; every error names its line."""
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CsvError(f"not valid UTF-8 ({exc.reason})", 1) from None
    else:
        text = data

    samples: list[Sample] = []
    seen_header = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not seen_header:
            if line.lstrip("﻿") != HEADER:
                raise CsvError(f"expected header {HEADER!r}, got {line!r}", lineno)
            seen_header = True
            continue

        parts = line.split(",")
        if len(parts) != 2:
            raise CsvError(f"expected 2 fields, got {len(parts)}", lineno)
        try:
            ts = parse_timestamp(parts[0].strip())
        except ValueError as exc:
            raise CsvError(str(exc), lineno) from None
        try:
            moisture = float(parts[1])
        except ValueError:
            raise CsvError(f"non-numeric moisture {parts[1]!r}", lineno) from None

        if samples:
            prev = samples[-1].timestamp
            if ts == prev:
                raise CsvError(f"duplicate timestamp {parts[0].strip()}", lineno)
            if ts < prev:
                raise CsvError(f"non-monotonic timestamp {parts[0].strip()}", lineno)
        try:
            samples.append(Sample(ts, moisture))
        except ValueError as exc:
            raise CsvError(str(exc), lineno) from None

    if not seen_header:
        raise CsvError("empty file", 1)
    if not samples:
        raise CsvError("no data rows", 2)
    return SoilMoistureSeries(tuple(samples), meta)


def render_csv(series: SoilMoistureSeries) -> str:
    """Inverse of parse_csv: header plus one canonical line per sample."""
    lines = [HEADER]
    lines.extend(sample_line(s) for s in series.samples)
    return "\n".join(lines) + "\n"


def detect_gaps(
    series: SoilMoistureSeries,
    nominal_interval: timedelta,
    gap_factor: float = 3.0,
) -> list[Gap]:
    """One Gap per maximal run of missing samples, in chronological order.

    A spacing counts as a gap only when it exceeds gap_factor times the
    nominal interval, which separates logging jitter from actual data loss.
    """
    if nominal_interval <= timedelta(0):
        raise ValueError("nominal_interval must be positive")
    threshold = nominal_interval * gap_factor
    gaps = []
    for a, b in zip(series.samples, series.samples[1:]):
        span = b.timestamp - a.timestamp
        if span > threshold:
            gaps.append(Gap(before=a.timestamp, after=b.timestamp, missing_span=span))
    return gaps
