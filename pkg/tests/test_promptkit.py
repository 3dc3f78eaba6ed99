from datetime import datetime, timedelta

import pytest

from spade.core import AnomalyType, Sample
from spade.promptkit import (
    DATA_BEGIN,
    DATA_END,
    PromptError,
    build_prompt,
    default_ruleset,
    extract_data_block,
    load_rules,
    parse_rules,
    serialize_segment,
    toggle_rule,
)

T0 = datetime(2023, 7, 1)


def samples_of(values):
    return [Sample(T0 + i * timedelta(minutes=15), v) for i, v in enumerate(values)]


class TestSerializeSegment:
    def test_line_format(self):
        text = serialize_segment([Sample(datetime(2023, 7, 1, 0, 15), 23.5)])
        assert text == "2023-07-01 00:15:00,23.5\n"

    def test_two_samples_chronological(self):
        text = serialize_segment(samples_of([20.0, 20.5]))
        assert text == "2023-07-01 00:00:00,20.0\n2023-07-01 00:15:00,20.5\n"

    def test_empty_rejected(self):
        with pytest.raises(PromptError):
            serialize_segment([])

    def test_inverse_line_parser_recovers_pairs(self):
        samples = samples_of([20.0, 21.3, 19.9, 55.5])
        text = serialize_segment(samples)
        recovered = []
        for line in text.strip().split("\n"):
            ts, value = line.split(",")
            recovered.append(
                (datetime.strptime(ts, "%Y-%m-%d %H:%M:%S"), float(value))
            )
        assert recovered == [(s.timestamp, s.moisture) for s in samples]


class TestDefaultRuleset:
    def test_seven_anomaly_rules(self):
        rules = default_ruleset()
        assert len(rules.anomaly_rules) == 7
        assert [r.id for r in rules.anomaly_rules] == [
            f"anomaly.{i}" for i in range(1, 8)
        ]

    def test_has_required_domain_rules(self):
        rules = default_ruleset()
        ids = [r.id for r in rules.domain_rules]
        assert "domain.2" in ids

    def test_every_anomaly_type_named_verbatim(self):
        rules = default_ruleset()
        corpus = "\n".join(r.body for r in rules.anomaly_rules)
        for t in AnomalyType:
            assert t.value in corpus, t.value

    def test_reexamination_rule_is_anomaly_7(self):
        rules = default_ruleset()
        rule7 = rules.anomaly_rules[6]
        assert rule7.id == "anomaly.7"
        assert "re-examine" in rule7.body.lower()


class TestTemplateFormat:
    def test_parse_sections_and_rules(self):
        text = (
            "[task]\nDo the work.\n"
            "[input]\nLines of data.\n"
            "[anomaly 1] First\nBody one.\n"
            "[anomaly 2] Second\nBody two\nspanning lines.\n"
            "[domain 1] D\nDomain body.\n"
            "[response]\nReply like this.\n"
        )
        rules = parse_rules(text)
        assert rules.task_preamble == "Do the work."
        assert rules.anomaly_rules[1].body == "Body two\nspanning lines."
        assert rules.domain_rules[0].id == "domain.1"

    def test_missing_section_rejected(self):
        with pytest.raises(PromptError, match="missing sections"):
            parse_rules("[task]\nx\n[input]\ny\n")

    def test_load_rules_from_file(self, tmp_path):
        path = tmp_path / "rules.txt"
        path.write_text(
            "[task]\nT.\n[input]\nI.\n[anomaly 1] A\nB.\n[response]\nR.\n",
            encoding="utf-8",
        )
        rules = load_rules(str(path))
        assert rules.anomaly_rules[0].title == "A"


class TestBuildPrompt:
    def test_contains_all_default_rules(self):
        rules = default_ruleset()
        prompt = build_prompt(rules, "2023-07-01 00:00:00,20.0\n")
        assert prompt.count("Anomaly Rule ") == 7
        assert prompt.count("Domain Rule ") == len(rules.domain_rules)

    def test_data_block_is_last_and_delimited(self):
        segment_text = "2023-07-01 00:00:00,20.0\n2023-07-01 00:15:00,20.5\n"
        prompt = build_prompt(default_ruleset(), segment_text)
        assert prompt.endswith(DATA_END + "\n")
        assert extract_data_block(prompt) == segment_text

    def test_disabled_rule_omitted_and_renumbered(self):
        rules = default_ruleset()
        toggled = toggle_rule(rules, "domain.2", False)
        full = build_prompt(rules, "x\n")
        reduced = build_prompt(toggled, "x\n")
        body = " ".join(toggled.domain_rules[1].body.split())
        assert body not in reduced.replace("\n", " ")
        # remaining domain rules renumbered contiguously
        n = sum(1 for r in rules.domain_rules if r.id != "domain.2")
        for i in range(1, n + 1):
            assert f"Domain Rule {i} " in reduced
        assert f"Domain Rule {n + 1} " not in reduced
        assert full != reduced

    def test_deterministic_across_calls(self):
        rules = default_ruleset()
        outputs = {build_prompt(rules, "2023-07-01 00:00:00,20.0\n") for _ in range(100)}
        assert len(outputs) == 1

    def test_empty_segment_text_rejected(self):
        with pytest.raises(PromptError):
            build_prompt(default_ruleset(), "")


class TestToggleRule:
    def test_involution(self):
        rules = default_ruleset()
        there = toggle_rule(rules, "domain.2", False)
        back = toggle_rule(there, "domain.2", True)
        assert back == rules

    def test_disable_anomaly_7_removes_reexamination(self):
        rules = default_ruleset()
        toggled = toggle_rule(rules, "anomaly.7", False)
        prompt = build_prompt(toggled, "x\n")
        assert "re-examine" not in prompt.lower()
        assert prompt.count("Anomaly Rule ") == 6

    def test_unknown_id_lists_valid_ones(self):
        rules = default_ruleset()
        with pytest.raises(PromptError) as err:
            toggle_rule(rules, "anomaly.9", False)
        message = str(err.value)
        for i in range(1, 8):
            assert f"anomaly.{i}" in message


class TestExtractDataBlock:
    def test_missing_sentinels(self):
        with pytest.raises(PromptError, match="no data block"):
            extract_data_block("just some text")

    def test_round_trip_with_serialization(self):
        samples = samples_of([20.0, 24.5, 24.0])
        text = serialize_segment(samples)
        prompt = build_prompt(default_ruleset(), text)
        assert extract_data_block(prompt) == text
