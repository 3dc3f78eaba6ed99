import pytest

from spade import synth
from spade.detectors import (
    DetectorParams,
    compose_report,
    detect_anomalies,
    detect_irrigation,
    flagit,
)


@pytest.fixture(scope="session")
def standard_corpus():
    """The acceptance corpus: 100 labeled 7-day series, seeds 1..100."""
    return synth.standard_corpus()


@pytest.fixture(scope="session")
def corpus_detections(standard_corpus):
    """Reference-detector and flagit reports for every corpus segment."""
    params = DetectorParams()
    rows = []
    for spec, series, truth in standard_corpus:
        events = detect_irrigation(series.samples, params)
        anomalies = detect_anomalies(series.samples, params, events)
        rows.append(
            {
                "spec": spec,
                "series": series,
                "truth": truth,
                "report": compose_report(events, anomalies),
                "flagit_report": compose_report([], flagit(series.samples)),
            }
        )
    return rows
