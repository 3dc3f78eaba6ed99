"""Deterministic rule engines over moisture segments.

Two detectors live here. The reference detector mirrors the prompt's rules
algorithmically: it looks for sharp edges, builds a deviation region around
each, and classifies the region by how long it stays away from its local
baseline and whether it declines afterwards — the same rise/plateau/decline
reasoning the domain rules describe. It doubles as the local analysis backend
and as the oracle for tests. The second is the FlagIT-style baseline:
absolute-range and first-difference thresholds only.

Classification of a region that deviates upward from its local baseline:

  returns within spike_revert_window        -> spike (grouped into
                                               MultipleSpikes when clustered)
  returns before shift_min_duration         -> TransientLevelShiftUp
  sustained, declining after the plateau    -> irrigation event
  sustained, flat                           -> PersistentLevelShiftUp

Downward regions mirror this without the irrigation branch. Regions too
small for the anomaly deviation threshold and too unsustained for an
irrigation event are ignored as jitter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from datetime import timedelta
from statistics import median
from typing import Sequence

from .core import (
    AnalysisReport,
    AnomalyEvent,
    AnomalyType,
    IrrigationEvent,
    Sample,
    SpadeError,
    format_timestamp,
    key_event_onset,
    round1,
)
from .ingest import Gap
from .segmenter import Segment

MOISTURE_RANGE = (0.0, 60.0)


@dataclass(frozen=True, slots=True)
class DetectorParams:
    """Thresholds for the reference detector.

    All values are configuration with defaults tuned so normal irrigation
    patterns pass and injected anomalies trigger; sample-count windows assume
    nothing about the interval beyond it being roughly regular.
    """

    rise_threshold: float = 1.5  # percent rise that starts a candidate
    rise_window: int = 4  # samples the rise may take
    net_gain_threshold: float = 1.0  # percent; below this an event is ignored
    plateau_window: int = 16  # samples searched for the post-rise maximum
    spike_revert_window: int = 4  # samples a spike may take to revert
    shift_min_duration: int = 96  # samples separating transient from persistent
    deviation_threshold: float = 3.0  # percent magnitude for spikes/dips/shifts
    baseline_lookback: int = 4  # samples medianed for the local baseline
    return_fraction: float = 0.25  # region over when back within this share of height
    decline_fraction: float = 0.2  # post-plateau drop share that marks irrigation

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"{f.name} must be positive")
        if self.spike_revert_window >= self.shift_min_duration:
            raise ValueError("spike_revert_window must be below shift_min_duration")


@dataclass(frozen=True, slots=True)
class FlagitParams:
    """Thresholds for the FlagIT-style baseline."""

    abs_min: float = 0.0
    abs_max: float = 60.0
    derivative_threshold: float = 5.0  # percent per sample step

    def __post_init__(self) -> None:
        if self.abs_min >= self.abs_max:
            raise ValueError("abs_min must be below abs_max")
        if self.derivative_threshold <= 0:
            raise ValueError("derivative_threshold must be positive")


def _load_kv(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise SpadeError(f"expected key=value in {path}, line {lineno}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _params_from_kv(cls, kv: dict[str, str], path: str):
    known = {f.name: f.type for f in fields(cls)}
    kwargs = {}
    for key, value in kv.items():
        if key not in known:
            raise SpadeError(f"unknown parameter {key!r} in {path}")
        kwargs[key] = int(value) if "int" in str(known[key]) else float(value)
    return cls(**kwargs)


def load_detector_params(path: str) -> DetectorParams:
    """Read a key=value file whose keys are DetectorParams field names."""
    return _params_from_kv(DetectorParams, _load_kv(path), path)


def load_flagit_params(path: str) -> FlagitParams:
    return _params_from_kv(FlagitParams, _load_kv(path), path)


@dataclass(frozen=True, slots=True)
class _Region:
    """One deviation region found by the scanner."""

    direction: int  # +1 up, -1 down
    onset: int  # first deviating sample
    peak: int  # extreme sample within the plateau window
    ret: int | None  # first sample back near baseline, None if never
    baseline: float
    height: float  # unsigned deviation magnitude
    declines: bool  # post-plateau level drops like an irrigation tail

    @property
    def duration(self) -> int | None:
        return None if self.ret is None else self.ret - self.onset


def _samples_of(segment: Segment | Sequence[Sample]) -> tuple[Sample, ...]:
    if isinstance(segment, Segment):
        return segment.samples
    return tuple(segment)


def _nominal_step(samples: Sequence[Sample]) -> timedelta:
    if len(samples) < 2:
        return timedelta(minutes=15)
    deltas = sorted(
        b.timestamp - a.timestamp for a, b in zip(samples, samples[1:])
    )
    return deltas[len(deltas) // 2]


def _scan_regions(values: list[float], params: DetectorParams) -> list[_Region]:
    n = len(values)
    regions: list[_Region] = []
    i = 0
    while i < n - 1:
        lo = max(0, i - params.baseline_lookback + 1)
        base = median(values[lo : i + 1])
        window = values[i + 1 : i + 1 + params.rise_window]
        rise = max(window) - base
        fall = base - min(window)
        if rise < params.rise_threshold and fall < params.rise_threshold:
            i += 1
            continue
        direction = 1 if rise >= fall else -1
        magnitude = rise if direction == 1 else fall
        region = _build_region(values, i, direction, magnitude, base, params)
        if region is None:
            i += 1
            continue
        regions.append(region)
        dur = region.duration
        if dur is not None and dur <= params.spike_revert_window:
            # Spike: resume immediately so adjacent spikes are seen.
            i = region.ret
        elif (
            dur is not None
            and dur < params.shift_min_duration
            and region.height >= params.deviation_threshold
        ):
            # Transient shift: resume once the baseline lookback clears the
            # shifted samples, or the contaminated median fakes a new edge.
            # Small sub-threshold regions (stepwise decline steps) must not
            # take this skip: their "return" can be the next event's rise.
            i = region.ret + params.baseline_lookback - 1
        else:
            # Sustained region (irrigation or persistent shift): resume just
            # past the plateau, far enough that the baseline lookback no
            # longer straddles the ramp, so later events are still seen.
            i = region.peak + params.baseline_lookback - 1
    return regions


def _build_region(
    values: list[float],
    edge: int,
    direction: int,
    magnitude: float,
    base: float,
    params: DetectorParams,
) -> _Region | None:
    n = len(values)
    # Onset: first sample clearly away from the baseline in this direction.
    step = max(0.5 * params.rise_threshold, 0.3 * magnitude)
    onset = None
    for j in range(edge + 1, min(edge + 1 + params.rise_window, n)):
        if direction * (values[j] - base) >= step:
            onset = j
            break
    if onset is None:
        return None

    def returned(j: int, level: float) -> bool:
        # A single low sample (for example a dip on an irrigation tail) must
        # not read as the region's end; the return needs a second sample.
        if direction * (values[j] - base) > level:
            return False
        return j + 1 >= n or direction * (values[j + 1] - base) <= level

    # Spike probe first: does the deviation revert within the spike window?
    # Without this, a cluster of nearby spikes would read as one wide region.
    probe_stop = min(onset + params.spike_revert_window + 1, n)
    span = values[onset:probe_stop]
    extreme = max(span) if direction == 1 else min(span)
    local_peak = onset + span.index(extreme)
    local_height = direction * (values[local_peak] - base)
    if local_height >= params.rise_threshold:
        for j in range(local_peak + 1, probe_stop):
            if returned(j, params.return_fraction * local_height):
                declines = _declines_after(values, local_peak, local_height, params)
                return _Region(
                    direction, onset, local_peak, j, base, local_height, declines
                )

    peak_stop = min(onset + params.plateau_window, n)
    span = values[onset:peak_stop]
    extreme = max(span) if direction == 1 else min(span)
    peak = onset + span.index(extreme)
    height = direction * (values[peak] - base)
    if height < params.rise_threshold:
        return None

    return_level = params.return_fraction * height
    ret = None
    for j in range(peak + 1, n):
        if returned(j, return_level):
            ret = j
            break
    if ret is not None:
        # A genuine shift ends with an abrupt jump back; a slow sag through
        # the return level (overlapping declining tails, dry-down drift) is
        # not a revert and the region counts as sustained.
        ref = max(peak, ret - params.rise_window)
        if direction * (values[ref] - values[ret]) < 0.6 * height:
            ret = None

    declines = _declines_after(values, peak, height, params)
    return _Region(direction, onset, peak, ret, base, height, declines)


def _declines_after(
    values: list[float], peak: int, height: float, params: DetectorParams
) -> bool:
    """Does the level drop away from the peak the way an irrigation tail does?

    Checked over up to shift_min_duration samples after the peak. With too
    little evidence (a segment ending right after the rise) the answer is
    True: a short sustained rise is indistinguishable from a fresh plateau,
    and treating it as irrigation matches how an operator reads it.
    """
    n = len(values)
    stop = min(peak + params.shift_min_duration, n)
    available = stop - peak
    if available < params.shift_min_duration // 2:
        return True
    tail_lo = max(peak + 1, stop - 4 * params.baseline_lookback)
    tail = median(values[tail_lo:stop])
    required = params.decline_fraction * height * (available / params.shift_min_duration)
    return (values[peak] - tail) >= required


def detect_irrigation(
    segment: Segment | Sequence[Sample],
    params: DetectorParams = DetectorParams(),
) -> list[IrrigationEvent]:
    """Valid irrigation/rainfall events, chronological.

    A candidate starts at a rise of rise_threshold within rise_window
    samples. It becomes an event only if it is sustained (no quick revert to
    the pre-rise baseline) and shows a post-plateau decline, with
    net gain = plateau - pre-spike-baseline at or above the threshold.
    """
    samples = _samples_of(segment)
    need = params.baseline_lookback + params.plateau_window
    if len(samples) < need:
        raise SpadeError(
            f"segment too short: {len(samples)} samples, need at least {need}"
        )
    values = [s.moisture for s in samples]
    events = []
    last_region_peak = None
    for region in _scan_regions(values, params):
        if region.direction != 1 or not _is_irrigation(region, params):
            continue
        plateau = values[region.peak]
        gain = round1(plateau - region.baseline)
        if gain < params.net_gain_threshold:
            continue
        # Overlapping candidates (a second trigger inside the same plateau)
        # merge into the earliest onset.
        if (
            last_region_peak is not None
            and region.onset <= last_region_peak + params.plateau_window
        ):
            continue
        last_region_peak = region.peak
        # Baseline stays at full precision (a median of one-decimal values)
        # so net_gain matches plateau - baseline within the rounding slack.
        events.append(
            IrrigationEvent(
                onset=samples[region.onset].timestamp,
                net_gain=gain,
                pre_spike_baseline=region.baseline,
                plateau=plateau,
            )
        )
    return events


def _is_irrigation(region: _Region, params: DetectorParams) -> bool:
    dur = region.duration
    if dur is not None and dur < params.shift_min_duration:
        return False  # reverted too fast: spike or transient shift
    return region.declines


def detect_anomalies(
    segment: Segment | Sequence[Sample],
    params: DetectorParams = DetectorParams(),
    irrigation: Sequence[IrrigationEvent] = (),
    *,
    suppress_irrigation: bool = True,
    gap_factor: float = 3.0,
) -> list[AnomalyEvent]:
    """Classify anomalies, re-examining candidates near irrigation events.

    With suppress_irrigation (the default), a candidate whose onset falls
    within spike_revert_window samples of a valid irrigation onset and whose
    shape matches rise-then-decline is dropped: it is the irrigation event.
    Disabling suppression reproduces the behavior of an analysis run without
    the re-examination rule, which reports such rises as SingleSpike.
    """
    samples = _samples_of(segment)
    if not samples:
        return []
    values = [s.moisture for s in samples]
    step = _nominal_step(samples)
    anomalies: list[AnomalyEvent] = []

    # Missing data first so a gap region is never double-labeled.
    for gap in detect_segment_gaps(samples, gap_factor=gap_factor):
        anomalies.append(
            AnomalyEvent(
                kind=AnomalyType.MISSING_VALUE,
                span_start=gap.before,
                span_end=gap.after,
                explanation=(
                    f"no data for {_human_span(gap.missing_span)} "
                    f"after {format_timestamp(gap.before)}"
                ),
            )
        )

    spikes: list[_Region] = []
    suppression_window = step * params.spike_revert_window
    irrigation_onsets = [e.onset for e in irrigation]

    for region in _scan_regions(values, params):
        onset_ts = samples[region.onset].timestamp
        if region.direction == 1 and _is_irrigation(region, params):
            if suppress_irrigation:
                near = any(
                    abs((onset_ts - o).total_seconds())
                    <= suppression_window.total_seconds()
                    for o in irrigation_onsets
                )
                if near or region.height < params.deviation_threshold:
                    continue
                # Irrigation-shaped but not among the valid events (should
                # not happen when irrigation came from detect_irrigation on
                # the same segment); classify it like any sustained shift.
            else:
                anomalies.append(
                    AnomalyEvent(
                        kind=AnomalyType.SINGLE_SPIKE,
                        span_start=onset_ts,
                        explanation=(
                            f"sharp rise of {region.height:.1f} at "
                            f"{format_timestamp(onset_ts)}"
                        ),
                    )
                )
                continue

        out_of_range = _region_out_of_range(values, region)
        if region.height < params.deviation_threshold and not out_of_range:
            continue

        dur = region.duration
        if dur is not None and dur <= params.spike_revert_window:
            spikes.append(region)
            continue

        kind = _shift_kind(region, params)
        end_idx = (region.ret - 1) if region.ret is not None else len(samples) - 1
        anomalies.append(
            AnomalyEvent(
                kind=kind,
                span_start=onset_ts,
                span_end=samples[end_idx].timestamp,
                explanation=(
                    f"level {'rose' if region.direction == 1 else 'fell'} by "
                    f"{region.height:.1f} from a baseline of {region.baseline:.1f}"
                    + (
                        ""
                        if region.ret is None
                        else f", reverting after {dur} samples"
                    )
                ),
            )
        )

    anomalies.extend(_spike_events(spikes, samples, params))
    anomalies.extend(_uncovered_out_of_range(samples, values, anomalies, params))
    anomalies.sort(key=lambda a: a.span_start)
    return anomalies


def _shift_kind(region: _Region, params: DetectorParams) -> AnomalyType:
    dur = region.duration
    transient = dur is not None and dur < params.shift_min_duration
    if region.direction == 1:
        return (
            AnomalyType.TRANSIENT_LEVEL_SHIFT_UP
            if transient
            else AnomalyType.PERSISTENT_LEVEL_SHIFT_UP
        )
    return (
        AnomalyType.TRANSIENT_LEVEL_SHIFT_DOWN
        if transient
        else AnomalyType.PERSISTENT_LEVEL_SHIFT_DOWN
    )


def _region_out_of_range(values: list[float], region: _Region) -> bool:
    stop = (region.ret if region.ret is not None else len(values))
    lo, hi = MOISTURE_RANGE
    return any(v < lo or v > hi for v in values[region.onset : stop])


def _spike_events(
    spikes: list[_Region], samples: tuple[Sample, ...], params: DetectorParams
) -> list[AnomalyEvent]:
    """Isolated spikes/dips, with nearby up-spikes grouped as MultipleSpikes."""
    events: list[AnomalyEvent] = []
    ups = [r for r in spikes if r.direction == 1]
    downs = [r for r in spikes if r.direction == -1]

    # Chain up-spikes whose onsets sit within 2x shift_min_duration.
    clusters: list[list[_Region]] = []
    for region in sorted(ups, key=lambda r: r.onset):
        if (
            clusters
            and region.onset - clusters[-1][-1].onset <= 2 * params.shift_min_duration
        ):
            clusters[-1].append(region)
        else:
            clusters.append([region])

    for cluster in clusters:
        if len(cluster) >= 3:
            first, last = cluster[0], cluster[-1]
            events.append(
                AnomalyEvent(
                    kind=AnomalyType.MULTIPLE_SPIKES,
                    span_start=samples[first.onset].timestamp,
                    span_end=samples[last.peak].timestamp,
                    explanation=(
                        f"{len(cluster)} sharp rises of up to "
                        f"{max(r.height for r in cluster):.1f} in close succession"
                    ),
                )
            )
        else:
            for region in cluster:
                events.append(_point_spike(region, samples, AnomalyType.SINGLE_SPIKE))
    for region in downs:
        events.append(_point_spike(region, samples, AnomalyType.SINGLE_DIP))
    return events


def _point_spike(
    region: _Region, samples: tuple[Sample, ...], kind: AnomalyType
) -> AnomalyEvent:
    start = samples[region.onset].timestamp
    end_idx = region.ret - 1 if region.ret is not None else region.peak
    end = samples[end_idx].timestamp if end_idx > region.onset else None
    word = "rise" if kind is AnomalyType.SINGLE_SPIKE else "drop"
    return AnomalyEvent(
        kind=kind,
        span_start=start,
        span_end=end,
        explanation=(
            f"isolated {word} of {region.height:.1f} from a baseline of "
            f"{region.baseline:.1f}, reverting within {region.duration} sample(s)"
        ),
    )


def _uncovered_out_of_range(
    samples: tuple[Sample, ...],
    values: list[float],
    existing: list[AnomalyEvent],
    params: DetectorParams,
) -> list[AnomalyEvent]:
    """Out-of-range readings always get a classification, threshold or not."""
    lo, hi = MOISTURE_RANGE

    def covered(ts) -> bool:
        for a in existing:
            end = a.span_end or a.span_start
            if a.span_start <= ts <= end:
                return True
        return False

    events = []
    i = 0
    n = len(values)
    while i < n:
        if lo <= values[i] <= hi or covered(samples[i].timestamp):
            i += 1
            continue
        j = i
        while j + 1 < n and not (lo <= values[j + 1] <= hi):
            j += 1
        run = j - i + 1
        above = values[i] > hi
        if run <= params.spike_revert_window:
            kind = AnomalyType.SINGLE_SPIKE if above else AnomalyType.SINGLE_DIP
        else:
            kind = (
                AnomalyType.PERSISTENT_LEVEL_SHIFT_UP
                if above
                else AnomalyType.PERSISTENT_LEVEL_SHIFT_DOWN
            )
        events.append(
            AnomalyEvent(
                kind=kind,
                span_start=samples[i].timestamp,
                span_end=samples[j].timestamp if j > i else None,
                explanation=(
                    f"{run} reading(s) outside the {lo:.0f}-{hi:.0f} range, "
                    f"worst {max(values[i:j+1], key=abs):.1f}"
                ),
            )
        )
        i = j + 1
    return events


def detect_segment_gaps(
    samples: Sequence[Sample], gap_factor: float = 3.0
) -> list[Gap]:
    """Gaps within a sample run, using the run's own median spacing."""
    if len(samples) < 2:
        return []
    nominal = _nominal_step(samples)
    threshold = nominal * gap_factor
    gaps = []
    for a, b in zip(samples, samples[1:]):
        span = b.timestamp - a.timestamp
        if span > threshold:
            gaps.append(Gap(before=a.timestamp, after=b.timestamp, missing_span=span))
    return gaps


def _human_span(delta: timedelta) -> str:
    minutes = int(delta.total_seconds() // 60)
    if minutes % 60 == 0:
        return f"{minutes // 60} h"
    return f"{minutes} min"


def flagit(
    segment: Segment | Sequence[Sample],
    fparams: FlagitParams = FlagitParams(),
) -> list[AnomalyEvent]:
    """The threshold/derivative baseline; explanations left empty.

    Flags every sample outside [abs_min, abs_max] and every arrival sample of
    a first difference at or above derivative_threshold. Adjacent flagged
    samples coalesce into one event, typed by the nearest label for the
    flagged shape.
    """
    samples = _samples_of(segment)
    if not samples:
        raise SpadeError("flagit requires a non-empty segment")
    values = [s.moisture for s in samples]
    n = len(values)

    flagged = [False] * n
    for i, v in enumerate(values):
        if v < fparams.abs_min or v > fparams.abs_max:
            flagged[i] = True
    deltas = [0.0] * n
    for i in range(1, n):
        deltas[i] = values[i] - values[i - 1]
        if abs(deltas[i]) >= fparams.derivative_threshold:
            flagged[i] = True

    events = []
    i = 0
    while i < n:
        if not flagged[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and flagged[j + 1]:
            j += 1
        kind = _flagit_kind(values, deltas, i, j, fparams)
        events.append(
            AnomalyEvent(
                kind=kind,
                span_start=samples[i].timestamp,
                span_end=samples[j].timestamp if j > i else None,
            )
        )
        i = j + 1
    return events


def _flagit_kind(
    values: list[float], deltas: list[float], i: int, j: int, fparams: FlagitParams
) -> AnomalyType:
    big = [
        d for d in deltas[i : j + 1] if abs(d) >= fparams.derivative_threshold
    ]
    ups = sum(1 for d in big if d > 0)
    downs = sum(1 for d in big if d < 0)
    if ups >= 3:
        return AnomalyType.MULTIPLE_SPIKES
    if ups and downs:
        return (
            AnomalyType.SINGLE_SPIKE if big[0] > 0 else AnomalyType.SINGLE_DIP
        )
    if ups:
        return AnomalyType.SINGLE_SPIKE
    if downs:
        return AnomalyType.SINGLE_DIP
    # Absolute-range flags only: a sustained out-of-range stretch.
    return (
        AnomalyType.PERSISTENT_LEVEL_SHIFT_UP
        if values[i] > fparams.abs_max
        else AnomalyType.PERSISTENT_LEVEL_SHIFT_DOWN
    )


def compose_report(
    irrigation: Sequence[IrrigationEvent], anomalies: Sequence[AnomalyEvent]
) -> AnalysisReport:
    """Assemble a validated report from detector output."""
    events = tuple(sorted(irrigation, key=lambda e: e.onset))
    found = tuple(sorted(anomalies, key=lambda a: a.span_start))
    return AnalysisReport(
        anomaly_detected=bool(found),
        anomalies=found,
        irrigation_events=events,
        key_event=key_event_onset(events),
        final_net_gain=round1(sum(e.net_gain for e in events)),
    )
