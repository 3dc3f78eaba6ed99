from datetime import datetime, timedelta

import pytest

from spade import synth
from spade.core import AnomalyType, SoilMoistureSeries
from spade.detectors import FlagitParams, flagit
from spade.ingest import parse_csv
from spade.synth import GroundTruth, InjectionError, ScenarioSpec, generate


class TestDeterminism:
    def test_same_spec_same_output(self):
        spec = ScenarioSpec(seed=12, irrigation_count=2,
                            anomaly_plan=((AnomalyType.SINGLE_SPIKE, 3.0),))
        a_series, a_truth = generate(spec)
        b_series, b_truth = generate(spec)
        assert a_series == b_series
        assert a_truth == b_truth

    def test_different_seeds_differ(self):
        a, _ = generate(ScenarioSpec(seed=1, irrigation_count=1))
        b, _ = generate(ScenarioSpec(seed=2, irrigation_count=1))
        assert a != b

    def test_export_byte_stable(self, tmp_path):
        spec = ScenarioSpec(seed=3, irrigation_count=2)
        p1 = synth.export_csv(generate(spec)[0], tmp_path / "a.csv")
        p2 = synth.export_csv(generate(spec)[0], tmp_path / "b.csv")
        assert p1.read_bytes() == p2.read_bytes()


class TestSpecValidation:
    def test_base_moisture_bounds(self):
        with pytest.raises(ValueError):
            ScenarioSpec(base_moisture=4.0)
        with pytest.raises(ValueError):
            ScenarioSpec(base_moisture=56.0)

    def test_unknown_shape(self):
        with pytest.raises(ValueError, match="unknown decline shapes"):
            ScenarioSpec(decline_shapes=("parabolic",))


class TestNormality:
    def test_quiet_series_has_no_sharp_rises(self):
        spec = ScenarioSpec(seed=23, irrigation_count=0, anomaly_plan=())
        series, truth = generate(spec)
        assert truth.irrigation == () and truth.anomalies == ()
        values = [s.moisture for s in series.samples]
        max_delta = max(abs(b - a) for a, b in zip(values, values[1:]))
        assert max_delta < 1.5  # below the detector's rise threshold

    def test_generated_values_in_range(self):
        for seed in (1, 2, 3):
            spec = ScenarioSpec(seed=seed, irrigation_count=3)
            series, _ = generate(spec)
            assert all(0.0 <= s.moisture <= 60.0 for s in series.samples)

    def test_no_injections_passes_flagit_clean(self):
        for seed in range(1, 21):
            spec = ScenarioSpec(
                seed=seed, base_moisture=20.0 + seed, irrigation_count=2
            )
            series, _ = generate(spec)
            assert flagit(series.samples, FlagitParams()) == []


class TestLabels:
    def test_gains_within_documented_range(self):
        for seed in range(1, 11):
            _, truth = generate(ScenarioSpec(seed=seed, irrigation_count=3))
            for event in truth.irrigation:
                assert 1.5 <= event.net_gain <= 8.0
                assert abs(
                    (event.plateau - event.pre_spike_baseline) - event.net_gain
                ) <= 0.05 + 1e-9

    def test_label_fidelity_spike(self):
        spec = ScenarioSpec(
            seed=6, irrigation_count=0,
            anomaly_plan=((AnomalyType.SINGLE_SPIKE, 3.0),),
        )
        series, truth = generate(spec)
        label = truth.anomalies[0]
        assert label.span_end is None
        by_time = {s.timestamp: s.moisture for s in series.samples}
        spike_value = by_time[label.span_start]
        prev = by_time[label.span_start - spec.interval]
        assert spike_value - prev >= 3.0  # only the labeled sample is perturbed

    def test_missing_value_removes_samples(self):
        spec = ScenarioSpec(
            seed=6, irrigation_count=0,
            anomaly_plan=((AnomalyType.MISSING_VALUE, 3.0),),
        )
        series, truth = generate(spec)
        label = truth.anomalies[0]
        stamps = {s.timestamp for s in series.samples}
        assert label.span_start in stamps and label.span_end in stamps
        probe = label.span_start + spec.interval
        while probe < label.span_end:
            assert probe not in stamps
            probe += spec.interval

    def test_injection_collision_raises(self):
        spec = ScenarioSpec(
            seed=1, irrigation_count=0,
            anomaly_plan=(
                (AnomalyType.SINGLE_SPIKE, 3.0),
                (AnomalyType.SINGLE_DIP, 3.02),
            ),
        )
        with pytest.raises(InjectionError, match="injection collision"):
            generate(spec)

    def test_labels_inside_series_range(self, standard_corpus):
        for _, series, truth in standard_corpus:
            for a in truth.anomalies:
                assert series.start <= a.span_start <= series.end
                if a.span_end is not None:
                    assert a.span_end <= series.end
            for e in truth.irrigation:
                assert series.start <= e.onset <= series.end


class TestScenarioFiles:
    def test_load_scenario(self, tmp_path):
        path = tmp_path / "scenario.txt"
        path.write_text(
            "days=10\n"
            "interval_minutes=15\n"
            "base_moisture=30\n"
            "irrigation_count=2\n"
            "decline_shapes=sharp,gradual\n"
            "noise_sd=0.1\n"
            "seed=99\n"
            "start=2023-05-01 00:00:00\n"
            "# a comment\n"
            "anomaly.1=SingleSpike@4.5\n"
            "anomaly.2=missing value@7.0\n",
            encoding="utf-8",
        )
        spec = synth.load_scenario(path)
        assert spec.days == 10
        assert spec.base_moisture == 30.0
        assert spec.decline_shapes == ("sharp", "gradual")
        assert spec.start == datetime(2023, 5, 1)
        assert spec.anomaly_plan == (
            (AnomalyType.SINGLE_SPIKE, 4.5),
            (AnomalyType.MISSING_VALUE, 7.0),
        )

    def test_load_scenario_bad_key(self, tmp_path):
        path = tmp_path / "scenario.txt"
        path.write_text("dayz=10\n", encoding="utf-8")
        with pytest.raises(synth.SpadeError, match="dayz"):
            synth.load_scenario(path)

    def test_truth_json_round_trip(self):
        _, truth = generate(
            ScenarioSpec(
                seed=5, irrigation_count=2,
                anomaly_plan=((AnomalyType.TRANSIENT_LEVEL_SHIFT_UP, 1.4),),
            )
        )
        recovered = synth.loads_truth(synth.dumps_truth(truth))
        assert recovered == truth


class TestStandardCorpus:
    def test_shape_of_corpus(self, standard_corpus):
        assert len(standard_corpus) == 100
        by_type = {t: 0 for t in AnomalyType}
        events = 0
        shapes = set()
        for spec, series, truth in standard_corpus:
            assert isinstance(series, SoilMoistureSeries)
            events += len(truth.irrigation)
            for a in truth.anomalies:
                by_type[a.kind] += 1
            shapes.update(spec.decline_shapes[: len(truth.irrigation)])
        assert all(count >= 12 for count in by_type.values()), by_type
        assert events >= 150
        assert shapes == {"gradual", "stepwise", "sharp"}

    def test_corpus_round_trips_through_csv(self, standard_corpus):
        spec, series, _ = standard_corpus[0]
        from spade.ingest import render_csv

        assert parse_csv(render_csv(series), series.meta) == series
