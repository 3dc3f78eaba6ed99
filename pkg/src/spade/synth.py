"""Seeded generator of realistic moisture series with labeled ground truth.

Irrigation events rise sharply over one to three samples and then decline in
one of three shapes (gradual exponential decay, stepwise daily drops, or a
comparatively sharp linear fall). Anomalies of all eight classes are injected
at requested approximate positions and their exact spans recorded, replacing
expert annotation at desk scale. Output is deterministic for a given seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .core import (
    AnomalyEvent,
    AnomalyType,
    IrrigationEvent,
    Sample,
    SeriesMeta,
    SoilMoistureSeries,
    SpadeError,
    format_timestamp,
    round1,
)
from .ingest import parse_timestamp, render_csv

DECLINE_SHAPES = ("gradual", "stepwise", "sharp")

GAIN_RANGE = (1.5, 8.0)
DEFAULT_START = datetime(2023, 7, 1)

# Sample-count geometry used when placing injections (margins, spacings).
_MARGIN = 24  # quarter day at 15 min: keep injections clear of each other
_EVENT_SPACING_DAYS = 1.5
_PERSISTENT_PRE_QUIET_DAYS = 4.0  # no irrigation shortly before a persistent shift
_TRANSIENT_DOWN_PRE_QUIET_DAYS = 2.0


class InjectionError(SpadeError):
    pass


@dataclass(frozen=True, slots=True)
class ScenarioSpec:
    """What to generate; every field has a reproducible default."""

    days: int = 7
    interval: timedelta = timedelta(minutes=15)
    base_moisture: float = 24.0
    irrigation_count: int = 2
    decline_shapes: tuple[str, ...] = DECLINE_SHAPES
    anomaly_plan: tuple[tuple[AnomalyType, float], ...] = ()
    noise_sd: float = 0.15
    seed: int = 0
    start: datetime = DEFAULT_START
    probe: str = "synthetic"

    def __post_init__(self) -> None:
        if not 5.0 <= self.base_moisture <= 55.0:
            raise ValueError("base_moisture must lie in [5, 55]")
        if self.days < 1 or self.irrigation_count < 0:
            raise ValueError("days must be >= 1 and irrigation_count >= 0")
        unknown = [s for s in self.decline_shapes if s not in DECLINE_SHAPES]
        if unknown:
            raise ValueError(f"unknown decline shapes: {unknown}")
        if not self.decline_shapes:
            raise ValueError("decline_shapes must be non-empty")


@dataclass(frozen=True, slots=True)
class GroundTruth:
    """The injected labels for one generated series."""

    irrigation: tuple[IrrigationEvent, ...] = ()
    anomalies: tuple[AnomalyEvent, ...] = ()

    @property
    def final_net_gain(self) -> float:
        return round1(sum(e.net_gain for e in self.irrigation))


@dataclass(frozen=True, slots=True)
class _Injection:
    kind: AnomalyType
    index: int
    length: int  # perturbed samples (gap length for MissingValue)
    height: float
    occupied: tuple[int, int]  # inclusive, with margins, for collision checks


def _samples_per_day(interval: timedelta) -> int:
    spd = 86400 / interval.total_seconds()
    if abs(spd - round(spd)) > 1e-9:
        raise ValueError("interval must divide a day evenly")
    return int(round(spd))


def _plan_injections(
    spec: ScenarioSpec, n: int, spd: int, rng: np.random.Generator
) -> list[_Injection]:
    injections: list[_Injection] = []
    for kind, day_offset in spec.anomaly_plan:
        idx = int(round(day_offset * spd)) + int(rng.integers(-4, 5))
        if kind in (
            AnomalyType.PERSISTENT_LEVEL_SHIFT_UP,
            AnomalyType.PERSISTENT_LEVEL_SHIFT_DOWN,
        ):
            idx = min(max(idx, 8), n - 104)
            length = n - idx
            height = float(rng.uniform(3.5, 6.5))
        elif kind in (
            AnomalyType.TRANSIENT_LEVEL_SHIFT_UP,
            AnomalyType.TRANSIENT_LEVEL_SHIFT_DOWN,
        ):
            length = int(rng.integers(12, 49))
            idx = min(max(idx, 8), n - length - 9)
            low = 4.0 if kind is AnomalyType.TRANSIENT_LEVEL_SHIFT_DOWN else 3.2
            height = float(rng.uniform(low, 4.8))
        elif kind is AnomalyType.MULTIPLE_SPIKES:
            # Spikes sit 6 samples apart: close enough to read as one burst,
            # far enough apart that each spike reverts before the next.
            count = int(rng.integers(3, 6))
            length = 6 * (count - 1) + 1
            idx = min(max(idx, 8), n - length - 9)
            height = float(rng.uniform(3.5, 4.5))
        elif kind is AnomalyType.MISSING_VALUE:
            length = int(rng.integers(8, 25))
            idx = min(max(idx, 8), n - length - 9)
            height = 0.0
        else:  # SingleSpike / SingleDip
            length = 1
            idx = min(max(idx, 8), n - 9)
            height = float(rng.uniform(3.5, 9.0))
        occupied = (idx - 8, idx + length - 1 + 8)
        injections.append(_Injection(kind, idx, length, height, occupied))

    injections.sort(key=lambda inj: inj.index)
    for a, b in zip(injections, injections[1:]):
        if b.occupied[0] <= a.occupied[1]:
            raise InjectionError(
                f"injection collision: {a.kind.value} at sample {a.index} and "
                f"{b.kind.value} at sample {b.index} would merge"
            )
    return injections


def _irrigation_exclusions(
    injections: list[_Injection], spd: int
) -> list[tuple[int, int]]:
    zones = []
    for inj in injections:
        lo = inj.index - _MARGIN
        hi = inj.occupied[1] + _MARGIN
        if inj.kind in (
            AnomalyType.PERSISTENT_LEVEL_SHIFT_UP,
            AnomalyType.PERSISTENT_LEVEL_SHIFT_DOWN,
        ):
            # A persistent shift must not sit on a steep irrigation tail, and
            # the shift's own classification window must stay event-free.
            lo = inj.index - int(_PERSISTENT_PRE_QUIET_DAYS * spd)
            hi = inj.index + int(1.25 * spd)
        elif inj.kind is AnomalyType.TRANSIENT_LEVEL_SHIFT_DOWN:
            lo = inj.index - int(_TRANSIENT_DOWN_PRE_QUIET_DAYS * spd)
        elif inj.kind is AnomalyType.TRANSIENT_LEVEL_SHIFT_UP:
            # Keep the shift out of the decline-check horizon of a preceding
            # event, or that event's tail reads as non-declining.
            lo = inj.index - int(1.25 * spd)
        zones.append((lo, hi))
    return zones


def _place_onsets(
    spec: ScenarioSpec,
    n: int,
    spd: int,
    zones: list[tuple[int, int]],
    rng: np.random.Generator,
) -> list[int]:
    if spec.irrigation_count == 0:
        return []
    spacing = int(_EVENT_SPACING_DAYS * spd)
    lo = spd // 2
    hi = n - spacing
    candidates = [
        i
        for i in range(lo, hi, 4)
        if not any(z0 <= i <= z1 for z0, z1 in zones)
    ]
    for _ in range(20):
        order = rng.permutation(len(candidates))
        chosen: list[int] = []
        for k in order:
            idx = candidates[k]
            if all(abs(idx - c) >= spacing for c in chosen):
                chosen.append(idx)
                if len(chosen) == spec.irrigation_count:
                    return sorted(chosen)
    raise InjectionError(
        f"injection collision: cannot place {spec.irrigation_count} irrigation "
        f"events clear of the anomaly plan"
    )


def _decline_excess(
    shape: str, gain: float, rise: int, length: int, interval_days: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Excess moisture from one event over `length` samples from its onset."""
    out = np.zeros(length)
    ramp = np.arange(1, rise + 1) / rise * gain
    out[: min(rise, length)] = ramp[: min(rise, length)]
    if length <= rise:
        return out
    elapsed = (np.arange(rise, length) - (rise - 1)) * interval_days
    if shape == "gradual":
        tau = rng.uniform(2.0, 3.0)
        tail = gain * np.exp(-elapsed / tau)
    elif shape == "stepwise":
        frac = rng.uniform(0.25, 0.30)
        period = rng.uniform(0.7, 0.8)
        tail = gain * np.maximum(0.0, 1.0 - frac * np.floor(elapsed / period))
    else:  # sharp
        rate = rng.uniform(0.35, 0.45)
        tail = gain * np.maximum(0.0, 1.0 - rate * elapsed)
    out[rise:] = tail
    return out


def generate(spec: ScenarioSpec) -> tuple[SoilMoistureSeries, GroundTruth]:
    """Build the series and its labels; byte-identical for equal specs."""
    rng = np.random.default_rng(spec.seed)
    spd = _samples_per_day(spec.interval)
    n = spec.days * spd
    interval_days = spec.interval.total_seconds() / 86400.0
    times = [spec.start + i * spec.interval for i in range(n)]

    injections = _plan_injections(spec, n, spd, rng)
    onsets = _place_onsets(spec, n, spd, _irrigation_exclusions(injections, spd), rng)

    # Dry-down base level.
    drift = rng.uniform(0.2, 0.35)
    t_days = np.arange(n) * interval_days
    signal = np.maximum(spec.base_moisture - drift * t_days, 3.0)

    truth_events: list[IrrigationEvent] = []
    for e_idx, onset in enumerate(onsets):
        gain = round1(float(rng.uniform(*GAIN_RANGE)))
        headroom = 59.0 - float(signal[onset])
        gain = min(gain, round1(headroom))
        shape = spec.decline_shapes[e_idx % len(spec.decline_shapes)]
        rise = 1 + (gain > 4.0) + (gain > 7.0)
        # rng draws for the decline happen regardless so streams stay aligned.
        excess = _decline_excess(shape, gain, rise, n - onset, interval_days, rng)
        if gain < GAIN_RANGE[0]:
            continue
        baseline = float(signal[onset])
        signal[onset:] += excess
        truth_events.append(
            IrrigationEvent(
                onset=times[onset],
                net_gain=round1(gain),
                pre_spike_baseline=baseline,
                plateau=baseline + gain,
            )
        )

    truth_anomalies: list[AnomalyEvent] = []
    exempt = np.zeros(n, dtype=bool)  # samples allowed outside [0, 60]
    drop = np.zeros(n, dtype=bool)
    for inj in injections:
        i, h = inj.index, inj.height
        if inj.kind is AnomalyType.SINGLE_SPIKE:
            signal[i] += h
            exempt[i] = True
            span = (times[i], None)
        elif inj.kind is AnomalyType.SINGLE_DIP:
            h = min(h, float(signal[i]) - 0.3)  # keep the dip physically above 0
            signal[i] -= h
            exempt[i] = True
            span = (times[i], None)
        elif inj.kind is AnomalyType.MULTIPLE_SPIKES:
            count = (inj.length - 1) // 6 + 1
            for k in range(count):
                signal[i + 6 * k] += h
                exempt[i + 6 * k] = True
            span = (times[i], times[i + 6 * (count - 1)])
        elif inj.kind is AnomalyType.TRANSIENT_LEVEL_SHIFT_UP:
            signal[i : i + inj.length] += h
            exempt[i : i + inj.length] = True
            span = (times[i], times[i + inj.length - 1])
        elif inj.kind is AnomalyType.TRANSIENT_LEVEL_SHIFT_DOWN:
            signal[i : i + inj.length] -= h
            exempt[i : i + inj.length] = True
            span = (times[i], times[i + inj.length - 1])
        elif inj.kind is AnomalyType.PERSISTENT_LEVEL_SHIFT_UP:
            signal[i:] += h
            exempt[i:] = True
            span = (times[i], times[n - 1])
        elif inj.kind is AnomalyType.PERSISTENT_LEVEL_SHIFT_DOWN:
            signal[i:] -= h
            exempt[i:] = True
            span = (times[i], times[n - 1])
        else:  # MissingValue
            drop[i : i + inj.length] = True
            span = (times[i - 1], times[i + inj.length])
        truth_anomalies.append(
            AnomalyEvent(
                kind=inj.kind,
                span_start=span[0],
                span_end=span[1],
                explanation=f"injected {inj.kind.value}",
            )
        )

    values = signal + rng.normal(0.0, spec.noise_sd, n)
    clipped = np.clip(values, 0.0, 60.0)
    values = np.where(exempt, values, clipped)

    samples = tuple(
        Sample(times[i], round1(float(values[i]))) for i in range(n) if not drop[i]
    )
    series = SoilMoistureSeries(
        samples, SeriesMeta(probe=spec.probe, depth_cm=10, crop=None)
    )
    truth = GroundTruth(
        irrigation=tuple(sorted(truth_events, key=lambda e: e.onset)),
        anomalies=tuple(sorted(truth_anomalies, key=lambda a: a.span_start)),
    )
    return series, truth


def export_csv(series: SoilMoistureSeries, path: str | Path) -> Path:
    """Write the series in the exact ingest format; round-trips losslessly."""
    path = Path(path)
    path.write_text(render_csv(series), encoding="utf-8")
    return path


def truth_to_json_dict(truth: GroundTruth) -> dict:
    return {
        "irrigation": [
            {
                "time": format_timestamp(e.onset),
                "net_gain": e.net_gain,
                "pre_spike_baseline": e.pre_spike_baseline,
                "plateau": e.plateau,
            }
            for e in truth.irrigation
        ],
        "anomalies": [
            {
                "time": (
                    format_timestamp(a.span_start)
                    if a.span_end is None
                    else f"{format_timestamp(a.span_start)}/{format_timestamp(a.span_end)}"
                ),
                "type": a.kind.value,
                "explanation": a.explanation,
            }
            for a in truth.anomalies
        ],
    }


def truth_from_json_dict(data: dict) -> GroundTruth:
    events = []
    for e in data.get("irrigation", []):
        events.append(
            IrrigationEvent(
                onset=parse_timestamp(e["time"]),
                net_gain=float(e["net_gain"]),
                pre_spike_baseline=e.get("pre_spike_baseline"),
                plateau=e.get("plateau"),
            )
        )
    anomalies = []
    for a in data.get("anomalies", []):
        parts = [p.strip() for p in a["time"].split("/")]
        anomalies.append(
            AnomalyEvent(
                kind=AnomalyType.parse(a["type"]),
                span_start=parse_timestamp(parts[0]),
                span_end=parse_timestamp(parts[1]) if len(parts) == 2 else None,
                explanation=a.get("explanation", ""),
            )
        )
    return GroundTruth(irrigation=tuple(events), anomalies=tuple(anomalies))


def dumps_truth(truth: GroundTruth) -> str:
    return json.dumps(truth_to_json_dict(truth), indent=2, sort_keys=True) + "\n"


def loads_truth(text: str) -> GroundTruth:
    return truth_from_json_dict(json.loads(text))


# --- scenario spec files -----------------------------------------------------

def load_scenario(path: str | Path) -> ScenarioSpec:
    """Read a key=value scenario file plus `anomaly.N=<Type>@<dayOffset>` rows."""
    kwargs: dict = {}
    plan: list[tuple[int, AnomalyType, float]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise SpadeError(f"expected key=value in {path}, line {lineno}")
            key, value = (part.strip() for part in line.split("=", 1))
            try:
                if key.startswith("anomaly."):
                    order = int(key.split(".", 1)[1])
                    type_label, offset = value.split("@", 1)
                    plan.append(
                        (order, AnomalyType.parse(type_label.strip()), float(offset))
                    )
                elif key == "days":
                    kwargs["days"] = int(value)
                elif key == "interval_minutes":
                    kwargs["interval"] = timedelta(minutes=float(value))
                elif key == "base_moisture":
                    kwargs["base_moisture"] = float(value)
                elif key == "irrigation_count":
                    kwargs["irrigation_count"] = int(value)
                elif key == "decline_shapes":
                    kwargs["decline_shapes"] = tuple(
                        s.strip() for s in value.split(",") if s.strip()
                    )
                elif key == "noise_sd":
                    kwargs["noise_sd"] = float(value)
                elif key == "seed":
                    kwargs["seed"] = int(value)
                elif key == "start":
                    kwargs["start"] = parse_timestamp(value)
                elif key == "probe":
                    kwargs["probe"] = value
                else:
                    raise ValueError(f"unknown key {key!r}")
            except ValueError as exc:
                raise SpadeError(f"{exc} in {path}, line {lineno}") from None
    if plan:
        kwargs["anomaly_plan"] = tuple(
            (kind, offset) for _, kind, offset in sorted(plan)
        )
    return ScenarioSpec(**kwargs)


# --- the standard acceptance corpus ------------------------------------------

_CORPUS_TYPES = (
    AnomalyType.SINGLE_SPIKE,
    AnomalyType.SINGLE_DIP,
    AnomalyType.MULTIPLE_SPIKES,
    AnomalyType.TRANSIENT_LEVEL_SHIFT_UP,
    AnomalyType.TRANSIENT_LEVEL_SHIFT_DOWN,
    AnomalyType.PERSISTENT_LEVEL_SHIFT_UP,
    AnomalyType.PERSISTENT_LEVEL_SHIFT_DOWN,
    AnomalyType.MISSING_VALUE,
)

_SHIFT_TYPES = frozenset(
    (
        AnomalyType.TRANSIENT_LEVEL_SHIFT_UP,
        AnomalyType.TRANSIENT_LEVEL_SHIFT_DOWN,
        AnomalyType.PERSISTENT_LEVEL_SHIFT_UP,
        AnomalyType.PERSISTENT_LEVEL_SHIFT_DOWN,
    )
)


def corpus_spec(seed: int) -> ScenarioSpec:
    """The scenario for one seed of the standard 100-segment corpus.

    Seeds 1..100 cover all eight anomaly classes at least 12 times each and
    around 175 irrigation events across the three decline shapes. Shifts are
    injected early in the week, before any irrigation, so their labels are
    unambiguous even to a human reader.
    """
    kind = _CORPUS_TYPES[seed % 8]
    if kind in _SHIFT_TYPES:
        day = 1.0 + 0.1 * (seed % 9)
        count = 1 + seed % 2
    else:
        day = 2.8 + 0.35 * (seed % 11)
        count = 1 + seed % 3
    shapes = DECLINE_SHAPES[seed % 3 :] + DECLINE_SHAPES[: seed % 3]
    return ScenarioSpec(
        days=7,
        base_moisture=12.0 + (seed * 7) % 28,
        irrigation_count=count,
        decline_shapes=shapes,
        anomaly_plan=((kind, day),),
        seed=seed,
        probe=f"probe{seed:03d}",
    )


def standard_corpus(
    seeds: range = range(1, 101),
) -> list[tuple[ScenarioSpec, SoilMoistureSeries, GroundTruth]]:
    out = []
    for seed in seeds:
        spec = corpus_spec(seed)
        series, truth = generate(spec)
        out.append((spec, series, truth))
    return out
