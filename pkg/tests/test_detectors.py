from datetime import datetime, timedelta

import pytest

from spade import synth
from spade.core import AnomalyType, Sample, SpadeError, validate_report
from spade.detectors import (
    DetectorParams,
    FlagitParams,
    compose_report,
    detect_anomalies,
    detect_irrigation,
    flagit,
    load_detector_params,
    load_flagit_params,
)
from spade.evaluation import match_events

T0 = datetime(2023, 7, 1)
PARAMS = DetectorParams()


def samples_of(values):
    return [Sample(T0 + i * timedelta(minutes=15), v) for i, v in enumerate(values)]


class TestParams:
    def test_defaults_valid(self):
        p = DetectorParams()
        assert p.rise_threshold == 1.5
        assert p.net_gain_threshold == 1.0
        assert p.shift_min_duration == 96

    def test_invariants(self):
        with pytest.raises(ValueError):
            DetectorParams(rise_threshold=0)
        with pytest.raises(ValueError):
            DetectorParams(spike_revert_window=96, shift_min_duration=96)
        with pytest.raises(ValueError):
            FlagitParams(abs_min=60.0, abs_max=0.0)

    def test_load_from_file(self, tmp_path):
        f = tmp_path / "params.txt"
        f.write_text("rise_threshold=2.0\nplateau_window=8\n", encoding="utf-8")
        p = load_detector_params(str(f))
        assert p.rise_threshold == 2.0
        assert p.plateau_window == 8
        assert p.net_gain_threshold == 1.0  # untouched default

    def test_load_rejects_unknown_key(self, tmp_path):
        f = tmp_path / "params.txt"
        f.write_text("rise_limit=2.0\n", encoding="utf-8")
        with pytest.raises(SpadeError, match="unknown parameter"):
            load_detector_params(str(f))

    def test_load_flagit(self, tmp_path):
        f = tmp_path / "fp.txt"
        f.write_text("derivative_threshold=7.5\n", encoding="utf-8")
        assert load_flagit_params(str(f)).derivative_threshold == 7.5


class TestDetectIrrigation:
    def test_constant_series_no_events(self):
        assert detect_irrigation(samples_of([25.0] * 100)) == []

    def test_step_event_net_gain(self):
        # short segment: a sustained step reads as a fresh plateau
        values = [20.0] * 10 + [24.5] * 30
        events = detect_irrigation(samples_of(values))
        assert len(events) == 1
        event = events[0]
        assert event.net_gain == 4.5
        assert event.onset == T0 + 10 * timedelta(minutes=15)
        assert event.pre_spike_baseline == 20.0
        assert event.plateau == 24.5

    def test_rejects_too_short_segment(self):
        with pytest.raises(SpadeError, match="segment too short"):
            detect_irrigation(samples_of([20.0] * 10))

    def test_sub_threshold_gain_ignored(self):
        params = DetectorParams(net_gain_threshold=5.0)
        values = [20.0] * 10 + [24.5] * 30
        assert detect_irrigation(samples_of(values), params) == []

    def test_spike_not_an_event(self):
        values = [20.0] * 50 + [26.0] + [20.0] * 50
        assert detect_irrigation(samples_of(values)) == []

    def test_three_decline_shapes_seeded(self):
        spec = synth.ScenarioSpec(
            days=7, base_moisture=24.0, irrigation_count=3, seed=11
        )
        series, truth = synth.generate(spec)
        events = detect_irrigation(series.samples)
        assert len(events) == 3
        tolerance = 2 * spec.interval  # onsets within two samples
        for detected, injected in zip(events, truth.irrigation):
            assert abs(detected.onset - injected.onset) <= tolerance

    def test_gain_invariant_to_post_plateau_tail(self):
        # the plateau is measured within plateau_window; a longer decline
        # tail must not move the net gain
        decline = [26.0 - 0.05 * k for k in range(1, 120)]
        values = [20.0] * 10 + [26.0] + decline
        base = detect_irrigation(samples_of(values))
        longer = [26.0 - 0.05 * k for k in range(1, 160)]
        extended = detect_irrigation(samples_of([20.0] * 10 + [26.0] + longer))
        assert len(base) == len(extended) == 1
        assert base[0].net_gain == extended[0].net_gain == 6.0

    def test_events_chronological(self, standard_corpus):
        for _, series, _ in standard_corpus[:10]:
            events = detect_irrigation(series.samples)
            onsets = [e.onset for e in events]
            assert onsets == sorted(onsets)


class TestDetectAnomalies:
    def test_pure_irrigation_suppressed(self):
        spec = synth.ScenarioSpec(days=7, irrigation_count=2, seed=8)
        series, _ = synth.generate(spec)
        events = detect_irrigation(series.samples)
        assert events
        assert detect_anomalies(series.samples, PARAMS, events) == []

    def test_out_of_range_isolated_spike(self):
        values = [22.0] * 50 + [75.0] + [22.0] * 50
        anomalies = detect_anomalies(samples_of(values), PARAMS, [])
        assert len(anomalies) == 1
        a = anomalies[0]
        assert a.kind == AnomalyType.SINGLE_SPIKE
        assert a.span_start == T0 + 50 * timedelta(minutes=15)
        assert a.span_end is None

    def test_suppression_disabled_reports_single_spike(self):
        spec = synth.ScenarioSpec(days=7, irrigation_count=1, seed=501)
        series, truth = synth.generate(spec)
        events = detect_irrigation(series.samples)
        assert len(events) == 1
        with_rule = detect_anomalies(series.samples, PARAMS, events)
        without_rule = detect_anomalies(
            series.samples, PARAMS, events, suppress_irrigation=False
        )
        assert with_rule == []
        spikes = [a for a in without_rule if a.kind == AnomalyType.SINGLE_SPIKE]
        assert spikes and spikes[0].span_start == events[0].onset

    def test_per_type_recall_on_corpus(self, corpus_detections):
        tp = {t: 0 for t in AnomalyType}
        total = {t: 0 for t in AnomalyType}
        for row in corpus_detections:
            truth = row["truth"]
            detected = list(row["report"].anomalies)
            m = match_events(
                sorted(detected, key=lambda a: a.span_start),
                sorted(truth.anomalies, key=lambda a: a.span_start),
            )
            matched = {t for _, t in m.pairs}
            for i, label in enumerate(
                sorted(truth.anomalies, key=lambda a: a.span_start)
            ):
                total[label.kind] += 1
                if i in matched:
                    tp[label.kind] += 1
        for kind in AnomalyType:
            assert total[kind] >= 12, kind
            recall = tp[kind] / total[kind]
            assert recall >= 0.9, (kind, recall, total[kind])

    def test_mirror_duality_maps_up_to_down(self):
        up = [20.0] * 20 + [24.0] * 40 + [20.0] * 60
        down = [20.0] * 20 + [16.0] * 40 + [20.0] * 60
        ups = detect_anomalies(samples_of(up), PARAMS, [])
        downs = detect_anomalies(samples_of(down), PARAMS, [])
        assert [a.kind for a in ups] == [AnomalyType.TRANSIENT_LEVEL_SHIFT_UP]
        assert [a.kind for a in downs] == [AnomalyType.TRANSIENT_LEVEL_SHIFT_DOWN]
        assert [(a.span_start, a.span_end) for a in ups] == [
            (a.span_start, a.span_end) for a in downs
        ]

    def test_missing_value_from_gap(self):
        values = [22.0] * 200
        samples = samples_of(values)
        holed = samples[:100] + samples[130:]
        anomalies = detect_anomalies(holed, PARAMS, [])
        assert [a.kind for a in anomalies] == [AnomalyType.MISSING_VALUE]
        assert anomalies[0].span_start == samples[99].timestamp
        assert anomalies[0].span_end == samples[130].timestamp

    def test_multiple_spikes_grouped(self):
        values = [22.0] * 40
        for k in range(4):
            values += [26.5] + [22.0] * 5
        values += [22.0] * 60
        anomalies = detect_anomalies(samples_of(values), PARAMS, [])
        assert [a.kind for a in anomalies] == [AnomalyType.MULTIPLE_SPIKES]
        assert anomalies[0].span_start == T0 + 40 * timedelta(minutes=15)

    def test_two_spikes_stay_single(self):
        values = [22.0] * 40 + [26.5] + [22.0] * 5 + [26.5] + [22.0] * 60
        anomalies = detect_anomalies(samples_of(values), PARAMS, [])
        assert [a.kind for a in anomalies] == [AnomalyType.SINGLE_SPIKE] * 2


class TestFlagit:
    def test_flat_series_clean(self):
        assert flagit(samples_of([25.0] * 100)) == []

    def test_out_of_range_sample_flagged(self):
        values = [25.0] * 50 + [75.0] + [25.0] * 49
        events = flagit(samples_of(values))
        assert len(events) == 1
        assert events[0].span_start == T0 + 50 * timedelta(minutes=15)
        assert events[0].kind == AnomalyType.SINGLE_SPIKE
        assert events[0].explanation == ""

    def test_derivative_rule(self):
        values = [25.0] * 50 + [31.0] * 50  # one +6 step
        events = flagit(samples_of(values))
        assert len(events) == 1
        assert events[0].kind == AnomalyType.SINGLE_SPIKE  # isolated positive delta

    def test_dip_flagged(self):
        values = [25.0] * 50 + [18.0] + [25.0] * 49
        events = flagit(samples_of(values))
        assert len(events) == 1
        assert events[0].kind == AnomalyType.SINGLE_DIP

    def test_monotone_in_derivative_threshold(self, standard_corpus):
        for _, series, _ in standard_corpus[:15]:
            lax = flagit(series.samples, FlagitParams(derivative_threshold=4.0))
            strict = flagit(series.samples, FlagitParams(derivative_threshold=6.0))
            assert len(strict) <= len(lax)

    def test_empty_rejected(self):
        with pytest.raises(SpadeError):
            flagit([])

    def test_persistent_shift_recall_below_reference(self, corpus_detections):
        shift_kinds = {
            AnomalyType.PERSISTENT_LEVEL_SHIFT_UP,
            AnomalyType.PERSISTENT_LEVEL_SHIFT_DOWN,
        }

        def recall(key):
            tp = total = 0
            for row in corpus_detections:
                truth_shifts = sorted(
                    (a for a in row["truth"].anomalies if a.kind in shift_kinds),
                    key=lambda a: a.span_start,
                )
                if not truth_shifts:
                    continue
                detected = sorted(
                    row[key].anomalies, key=lambda a: a.span_start
                )
                m = match_events(detected, truth_shifts)
                tp += m.tp
                total += len(truth_shifts)
            return tp / total

        assert recall("flagit_report") < recall("report")


class TestComposeReport:
    def test_empty(self):
        report = compose_report([], [])
        assert report.anomaly_detected is False
        assert report.final_net_gain == 0.0
        assert report.key_event is None
        assert validate_report(report) == []

    def test_sum_and_argmax(self):
        from spade.core import IrrigationEvent

        events = [
            IrrigationEvent(onset=T0, net_gain=2.0),
            IrrigationEvent(onset=T0 + timedelta(days=1), net_gain=3.5),
        ]
        report = compose_report(events, [])
        assert report.final_net_gain == 5.5
        assert report.key_event == events[1].onset

    def test_all_corpus_reports_validate(self, corpus_detections):
        for row in corpus_detections:
            assert validate_report(row["report"]) == []
            assert validate_report(row["flagit_report"]) == []
