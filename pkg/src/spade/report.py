"""The response grammar: strict rendering and lenient parsing of reports.

render() emits the canonical layout the prompt demands; parse() accepts what
a chat backend actually returns: markdown bullets, mixed-case keys, prose
before and after the two section headers, and loosely formatted type labels.
A JSON mirror of the report is provided for machine consumers.
"""

from __future__ import annotations

import json
import re
from datetime import datetime

from .core import (
    AnalysisReport,
    AnomalyEvent,
    AnomalyType,
    IrrigationEvent,
    SpadeError,
    format_timestamp,
    round1,
    validate_report,
)
from .ingest import parse_timestamp

ANOMALY_HEADER = "ANOMALY REPORT"
IRRIGATION_HEADER = "IRRIGATION REPORT"


class ReportError(SpadeError):
    pass


def _format_span(start: datetime, end: datetime | None) -> str:
    if end is None:
        return format_timestamp(start)
    return f"{format_timestamp(start)}/{format_timestamp(end)}"


def render(report: AnalysisReport) -> str:
    """Canonical text form; refuses reports that fail validation."""
    violations = validate_report(report)
    if violations:
        raise ReportError("cannot render invalid report: " + "; ".join(violations))

    lines = [ANOMALY_HEADER]
    lines.append(f"anomaly_detected: {'yes' if report.anomaly_detected else 'no'}")
    for a in report.anomalies:
        lines.append(f"- time: {_format_span(a.span_start, a.span_end)}")
        lines.append(f"  type: {a.kind.value}")
        lines.append(f"  explanation: {a.explanation}")
    lines.append(IRRIGATION_HEADER)
    n = len(report.irrigation_events)
    lines.append(f"summary: {n} valid irrigation/rainfall events detected")
    for e in report.irrigation_events:
        lines.append(f"- time: {format_timestamp(e.onset)}")
        lines.append(f"  net_gain: {e.net_gain:.1f}")
    key = format_timestamp(report.key_event) if report.key_event else "none"
    lines.append(f"key_event: {key}")
    lines.append(f"final_net_gain: {report.final_net_gain:.1f}")
    return "\n".join(lines) + "\n"


_BULLET_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")
_KEY_VALUE_RE = re.compile(r"^\s*[*_`\s]*([A-Za-z][A-Za-z _]*?)[*_`\s]*:\s*(.*?)\s*$")


def _normalize_header(line: str) -> str:
    stripped = _BULLET_RE.sub("", line)
    stripped = re.sub(r"[#*_`>]+", "", stripped).strip().strip(":").strip()
    return re.sub(r"\s+", " ", stripped).lower()


def _parse_span(text: str, line: str) -> tuple[datetime, datetime | None]:
    parts = [p.strip() for p in text.split("/")]
    try:
        if len(parts) == 1:
            return parse_timestamp(parts[0]), None
        if len(parts) == 2:
            return parse_timestamp(parts[0]), parse_timestamp(parts[1])
    except ValueError:
        pass
    raise ReportError(f"unparseable time {text!r} in line {line!r}")


def _parse_number(text: str, line: str) -> float:
    cleaned = text.replace("%", "").strip().rstrip(".")
    try:
        return float(cleaned)
    except ValueError:
        raise ReportError(f"unparseable number {text!r} in line {line!r}") from None


def parse(text: str) -> AnalysisReport:
    """Recover a report from backend output, tolerating decoration."""
    lines = text.splitlines()
    anomaly_at = irrigation_at = None
    for i, line in enumerate(lines):
        header = _normalize_header(line)
        if header == ANOMALY_HEADER.lower() and anomaly_at is None:
            anomaly_at = i
        elif header == IRRIGATION_HEADER.lower() and irrigation_at is None:
            irrigation_at = i
    if anomaly_at is None or irrigation_at is None or irrigation_at < anomaly_at:
        raise ReportError(
            "unstructured response: expected an ANOMALY REPORT section "
            "followed by an IRRIGATION REPORT section"
        )

    anomaly_detected: bool | None = None
    anomalies: list[dict] = []
    events: list[dict] = []
    key_event: datetime | None = None
    final_net_gain: float | None = None
    current: dict | None = None

    def in_anomaly(i: int) -> bool:
        return anomaly_at < i < irrigation_at

    for i in range(anomaly_at + 1, len(lines)):
        if i == irrigation_at:
            current = None
            continue
        raw = lines[i]
        is_bullet = bool(_BULLET_RE.match(raw))
        m = _KEY_VALUE_RE.match(_BULLET_RE.sub("", raw))
        if not m:
            continue
        key = re.sub(r"[\s_]+", "", m.group(1)).lower()
        value = m.group(2).strip().strip("*_`")

        if key == "anomalydetected":
            anomaly_detected = value.lower() in ("yes", "true", "1")
        elif key == "time":
            # Only a bulleted time line opens a new item; stray prose cannot
            # fabricate events.
            if not is_bullet:
                continue
            start, end = _parse_span(value, raw)
            current = {"start": start, "end": end}
            (anomalies if in_anomaly(i) else events).append(current)
        elif key == "type" and current is not None and in_anomaly(i):
            try:
                current["type"] = AnomalyType.parse(value)
            except ValueError as exc:
                raise ReportError(str(exc)) from None
        elif key == "explanation" and current is not None and in_anomaly(i):
            current["explanation"] = value
        elif key == "netgain" and current is not None and not in_anomaly(i):
            current["net_gain"] = _parse_number(value, raw)
        elif key == "keyevent":
            if value.lower() in ("none", "null", "-", ""):
                key_event = None
            else:
                key_event, _ = _parse_span(value, raw)
        elif key == "finalnetgain":
            final_net_gain = _parse_number(value, raw)

    parsed_anomalies = []
    for item in anomalies:
        if "type" not in item:
            raise ReportError(
                f"anomaly at {format_timestamp(item['start'])} has no type line"
            )
        parsed_anomalies.append(
            AnomalyEvent(
                kind=item["type"],
                span_start=item["start"],
                span_end=item["end"],
                explanation=item.get("explanation", ""),
            )
        )
    parsed_events = []
    for item in events:
        if "net_gain" not in item:
            raise ReportError(
                f"event at {format_timestamp(item['start'])} has no net_gain line"
            )
        parsed_events.append(IrrigationEvent(onset=item["start"], net_gain=item["net_gain"]))

    if anomaly_detected is None:
        anomaly_detected = bool(parsed_anomalies)
    if final_net_gain is None:
        final_net_gain = round1(sum(e.net_gain for e in parsed_events))

    return AnalysisReport(
        anomaly_detected=anomaly_detected,
        anomalies=tuple(parsed_anomalies),
        irrigation_events=tuple(parsed_events),
        key_event=key_event,
        final_net_gain=final_net_gain,
    )


def to_json_dict(report: AnalysisReport) -> dict:
    """The JSON mirror with fixed field names for machine consumers."""
    return {
        "anomaly_detected": report.anomaly_detected,
        "anomalies": [
            {
                "time": _format_span(a.span_start, a.span_end),
                "type": a.kind.value,
                "explanation": a.explanation,
            }
            for a in report.anomalies
        ],
        "events": [
            {"time": format_timestamp(e.onset), "net_gain": e.net_gain}
            for e in report.irrigation_events
        ],
        "key_event": format_timestamp(report.key_event) if report.key_event else None,
        "final_net_gain": report.final_net_gain,
    }


def from_json_dict(data: dict) -> AnalysisReport:
    anomalies = []
    for a in data.get("anomalies", []):
        start, end = _parse_span(a["time"], a["time"])
        anomalies.append(
            AnomalyEvent(
                kind=AnomalyType.parse(a["type"]),
                span_start=start,
                span_end=end,
                explanation=a.get("explanation", ""),
            )
        )
    events = [
        IrrigationEvent(onset=parse_timestamp(e["time"]), net_gain=float(e["net_gain"]))
        for e in data.get("events", [])
    ]
    key = data.get("key_event")
    return AnalysisReport(
        anomaly_detected=bool(data["anomaly_detected"]),
        anomalies=tuple(anomalies),
        irrigation_events=tuple(events),
        key_event=parse_timestamp(key) if key else None,
        final_net_gain=float(data["final_net_gain"]),
    )


def dumps_json(report: AnalysisReport) -> str:
    return json.dumps(to_json_dict(report), indent=2, sort_keys=True) + "\n"


def loads_json(text: str) -> AnalysisReport:
    return from_json_dict(json.loads(text))
