"""Segment serialization and prompt assembly from a toggleable rule set.

Rule texts ship as an editable template file (see data/default_rules.txt),
not code constants, so operators can tune wording and thresholds without a
release. The template format: sections introduced by `[task]`, `[input]`,
`[anomaly N] <title>`, `[domain N] <title>`, `[response]`; a section's body
runs until the next header.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from importlib import resources
from typing import Sequence

from .core import Sample, SpadeError, sample_line
from .segmenter import Segment

DATA_BEGIN = "---DATA BEGIN---"
DATA_END = "---DATA END---"

_SECTION_RE = re.compile(r"^\[(task|input|response)\]\s*$")
_RULE_RE = re.compile(r"^\[(anomaly|domain)\s+(\d+)\]\s*(.*)$")


class PromptError(SpadeError):
    pass


@dataclass(frozen=True, slots=True)
class Rule:
    id: str
    title: str
    body: str
    enabled: bool = True

    def __post_init__(self) -> None:
        if not self.body.strip():
            raise ValueError(f"rule {self.id} has an empty body")


@dataclass(frozen=True, slots=True)
class RuleSet:
    task_preamble: str
    input_format_note: str
    anomaly_rules: tuple[Rule, ...]
    domain_rules: tuple[Rule, ...]
    response_format: str

    def __post_init__(self) -> None:
        ids = [r.id for r in self.anomaly_rules + self.domain_rules]
        dupes = {i for i in ids if ids.count(i) > 1}
        if dupes:
            raise ValueError(f"duplicate rule ids: {sorted(dupes)}")

    @property
    def rule_ids(self) -> list[str]:
        return [r.id for r in self.anomaly_rules + self.domain_rules]


def parse_rules(text: str) -> RuleSet:
    """Parse the template format into a RuleSet."""
    sections: dict[str, list[str]] = {}
    anomaly: list[Rule] = []
    domain: list[Rule] = []
    current: list[str] | None = None
    pending_rule: tuple[str, str, str] | None = None  # (kind, number, title)

    def flush_rule() -> None:
        nonlocal pending_rule, current
        if pending_rule is None:
            return
        kind, number, title = pending_rule
        body = "\n".join(current or []).strip()
        rule = Rule(id=f"{kind}.{number}", title=title, body=body)
        (anomaly if kind == "anomaly" else domain).append(rule)
        pending_rule = None

    for raw in text.splitlines():
        m = _SECTION_RE.match(raw)
        if m:
            flush_rule()
            current = sections.setdefault(m.group(1), [])
            continue
        m = _RULE_RE.match(raw)
        if m:
            flush_rule()
            pending_rule = (m.group(1), m.group(2), m.group(3).strip())
            current = []
            continue
        if current is not None:
            current.append(raw)
    flush_rule()

    missing = [k for k in ("task", "input", "response") if k not in sections]
    if missing:
        raise PromptError(f"rule template missing sections: {missing}")
    return RuleSet(
        task_preamble="\n".join(sections["task"]).strip(),
        input_format_note="\n".join(sections["input"]).strip(),
        anomaly_rules=tuple(anomaly),
        domain_rules=tuple(domain),
        response_format="\n".join(sections["response"]).strip(),
    )


def load_rules(path: str | None = None) -> RuleSet:
    """Load a rule template file; None loads the packaged default."""
    if path is None:
        text = resources.files("spade.data").joinpath("default_rules.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_rules(text)


def default_ruleset() -> RuleSet:
    return load_rules(None)


def toggle_rule(ruleset: RuleSet, rule_id: str, enabled: bool) -> RuleSet:
    """Return a copy of the rule set with one rule's enabled flag changed."""
    found = False

    def flip(rules: tuple[Rule, ...]) -> tuple[Rule, ...]:
        nonlocal found
        out = []
        for r in rules:
            if r.id == rule_id:
                found = True
                r = replace(r, enabled=enabled)
            out.append(r)
        return tuple(out)

    result = replace(
        ruleset,
        anomaly_rules=flip(ruleset.anomaly_rules),
        domain_rules=flip(ruleset.domain_rules),
    )
    if not found:
        raise PromptError(
            f"unknown rule id {rule_id!r}; valid ids: {', '.join(ruleset.rule_ids)}"
        )
    return result


def serialize_segment(segment: Segment | Sequence[Sample]) -> str:
    """One line per sample, chronological, newline-terminated, no header."""
    samples = segment.samples if isinstance(segment, Segment) else tuple(segment)
    if not samples:
        raise PromptError("cannot serialize an empty segment")
    return "".join(sample_line(s) + "\n" for s in samples)


def _numbered(label: str, rules: tuple[Rule, ...]) -> list[str]:
    # Disabled rules are omitted and the rest renumbered contiguously so the
    # prompt stays self-consistent for the backend.
    out = []
    n = 0
    for rule in rules:
        if not rule.enabled:
            continue
        n += 1
        body = " ".join(rule.body.split())
        out.append(f"{label} {n} ({rule.title}): {body}")
    return out


def build_prompt(ruleset: RuleSet, segment_text: str) -> str:
    """Deterministic assembly: preamble, rules, response format, data block."""
    if not segment_text:
        raise PromptError("segment text is empty")
    parts = [
        ruleset.task_preamble,
        "",
        "Input format:",
        ruleset.input_format_note,
        "",
        "Anomaly rules:",
        *_numbered("Anomaly Rule", ruleset.anomaly_rules),
        "",
        "Domain rules:",
        *_numbered("Domain Rule", ruleset.domain_rules),
        "",
        "Response format:",
        ruleset.response_format,
        "",
        DATA_BEGIN,
    ]
    text = "\n".join(parts) + "\n" + segment_text
    if not segment_text.endswith("\n"):
        text += "\n"
    return text + DATA_END + "\n"


def extract_data_block(prompt: str) -> str:
    """The verbatim segment text between the data sentinels."""
    begin = prompt.find(DATA_BEGIN)
    end = prompt.find(DATA_END)
    if begin < 0 or end < 0 or end < begin:
        raise PromptError("no data block: data sentinels missing or malformed")
    return prompt[begin + len(DATA_BEGIN) :].split(DATA_END)[0].lstrip("\n")
