"""Domain types shared by every stage of the pipeline.

All types are immutable after construction and safe to share between
concurrent tasks. Moisture values are volumetric soil moisture content in
percent, carried at one decimal place; no scaling is ever applied to them.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum

TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M:%S"


class SpadeError(Exception):
    """Base class for errors raised by this package."""


def round1(value: float) -> float:
    """Round to one decimal place, half away from zero.

    Python's built-in round() is half-to-even, which would turn 23.45 into
    23.4; sensor values are carried half-up per the data preparation rule.
    """
    if not math.isfinite(value):
        raise ValueError(f"cannot round non-finite value {value!r}")
    return float(Decimal(repr(value)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def format_timestamp(ts: datetime) -> str:
    return ts.strftime(TIMESTAMP_FORMAT)


def sample_line(sample: Sample) -> str:
    """The canonical one-line serialization: `YYYY-MM-DD HH:MM:SS,<value>`."""
    return f"{format_timestamp(sample.timestamp)},{sample.moisture:.1f}"


@dataclass(frozen=True, slots=True)
class Sample:
    """One observation: a timestamp and a moisture reading in percent."""

    timestamp: datetime
    moisture: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.moisture):
            raise ValueError("moisture must be finite")
        object.__setattr__(self, "moisture", round1(self.moisture))


@dataclass(frozen=True, slots=True)
class SeriesMeta:
    """Probe identity for a series; the probe id is an opaque string."""

    probe: str
    depth_cm: int = 0
    crop: str | None = None


@dataclass(frozen=True, slots=True)
class SoilMoistureSeries:
    """A non-empty, strictly chronological sequence of samples."""

    samples: tuple[Sample, ...]
    meta: SeriesMeta

    def __post_init__(self) -> None:
        if not self.samples:
            raise ValueError("series must contain at least one sample")
        object.__setattr__(self, "samples", tuple(self.samples))
        for prev, cur in zip(self.samples, self.samples[1:]):
            if cur.timestamp <= prev.timestamp:
                raise ValueError(
                    f"timestamps must be strictly increasing "
                    f"({prev.timestamp} then {cur.timestamp})"
                )

    @property
    def start(self) -> datetime:
        return self.samples[0].timestamp

    @property
    def end(self) -> datetime:
        return self.samples[-1].timestamp


class AnomalyType(str, Enum):
    """The closed set of abnormal-pattern classes."""

    SINGLE_SPIKE = "SingleSpike"
    SINGLE_DIP = "SingleDip"
    MULTIPLE_SPIKES = "MultipleSpikes"
    PERSISTENT_LEVEL_SHIFT_UP = "PersistentLevelShiftUp"
    PERSISTENT_LEVEL_SHIFT_DOWN = "PersistentLevelShiftDown"
    TRANSIENT_LEVEL_SHIFT_UP = "TransientLevelShiftUp"
    TRANSIENT_LEVEL_SHIFT_DOWN = "TransientLevelShiftDown"
    MISSING_VALUE = "MissingValue"

    @classmethod
    def parse(cls, label: str) -> "AnomalyType":
        """Match a label case-insensitively, ignoring spaces/underscores/hyphens."""
        key = "".join(ch for ch in label if ch.isalnum()).lower()
        try:
            return _ANOMALY_LABELS[key]
        except KeyError:
            raise ValueError(f"unknown anomaly type: {label}") from None


_ANOMALY_LABELS = {t.value.lower(): t for t in AnomalyType}


@dataclass(frozen=True, slots=True)
class AnomalyEvent:
    """A detected anomaly: its class and where it occurs.

    span_end is None for point anomalies; for ranges the span is inclusive.
    """

    kind: AnomalyType
    span_start: datetime
    span_end: datetime | None = None
    explanation: str = ""

    def __post_init__(self) -> None:
        if self.span_end is not None and self.span_end < self.span_start:
            raise ValueError("span end precedes span start")

    @property
    def reference_time(self) -> datetime:
        return self.span_start


@dataclass(frozen=True, slots=True)
class IrrigationEvent:
    """A valid irrigation or rainfall event.

    pre_spike_baseline and plateau are internal measurements; the report wire
    format carries only onset and net_gain, so both are optional here.
    """

    onset: datetime
    net_gain: float
    pre_spike_baseline: float | None = None
    plateau: float | None = None


@dataclass(frozen=True, slots=True)
class AnalysisReport:
    """The structured result for one analyzed segment."""

    anomaly_detected: bool
    anomalies: tuple[AnomalyEvent, ...] = ()
    irrigation_events: tuple[IrrigationEvent, ...] = ()
    key_event: datetime | None = None
    final_net_gain: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "anomalies", tuple(self.anomalies))
        object.__setattr__(self, "irrigation_events", tuple(self.irrigation_events))


# Slack allowed on derived sums/differences of one-decimal values.
ROUNDING_SLACK = 0.05


def key_event_onset(events: tuple[IrrigationEvent, ...]) -> datetime | None:
    """Onset of the event with the highest net gain; earliest onset on ties."""
    if not events:
        return None
    best = max(events, key=lambda e: (e.net_gain, -e.onset.timestamp()))
    return best.onset


def validate_report(report: AnalysisReport) -> list[str]:
    """Check the report invariants; each violation names the field and rule.

    Violations are data, not failures: the empty list means the report is
    internally consistent.
    """
    violations: list[str] = []

    if report.anomaly_detected != bool(report.anomalies):
        violations.append(
            f"anomaly_detected: must be true iff anomalies is non-empty "
            f"(flag={str(report.anomaly_detected).lower()}, "
            f"{len(report.anomalies)} anomalies)"
        )

    for i, event in enumerate(report.irrigation_events):
        if event.pre_spike_baseline is not None and event.plateau is not None:
            implied = event.plateau - event.pre_spike_baseline
            if abs(event.net_gain - implied) > ROUNDING_SLACK + 1e-9:
                violations.append(
                    f"irrigation_events[{i}].net_gain: must equal plateau minus "
                    f"pre-spike baseline within {ROUNDING_SLACK} "
                    f"(net_gain={event.net_gain}, implied={implied:.2f})"
                )

    if report.key_event is not None:
        expected = key_event_onset(report.irrigation_events)
        if expected is None:
            violations.append("key_event: present but there are no irrigation events")
        elif report.key_event != expected:
            violations.append(
                f"key_event: must be the onset of the highest-net-gain event "
                f"(got {format_timestamp(report.key_event)}, "
                f"expected {format_timestamp(expected)})"
            )

    total = sum(e.net_gain for e in report.irrigation_events)
    slack = ROUNDING_SLACK * max(len(report.irrigation_events), 1)
    if abs(report.final_net_gain - total) > slack + 1e-9:
        violations.append(
            f"final_net_gain: must equal the sum of event net gains within "
            f"{slack:.2f} (got {report.final_net_gain}, sum={total:.2f})"
        )

    return violations


def infer_interval(series: SoilMoistureSeries) -> timedelta:
    """Median spacing between consecutive samples.

    The median makes the nominal interval robust to data gaps and occasional
    logging jitter.
    """
    if len(series.samples) < 2:
        raise SpadeError("series too short: need at least 2 samples to infer interval")
    deltas = [
        b.timestamp - a.timestamp
        for a, b in zip(series.samples, series.samples[1:])
    ]
    return statistics.median(deltas)
