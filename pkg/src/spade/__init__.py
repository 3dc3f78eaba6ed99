"""Soil moisture pattern and anomaly detection.

Turns volumetric soil moisture time series into structured irrigation and
anomaly reports via a rule-structured prompt sent to a pluggable backend:
a remote chat-completion endpoint or a deterministic local rules engine.
Ships a FlagIT-style baseline, a labeled synthetic corpus generator, and an
evaluation harness.
"""

from .core import (
    AnalysisReport,
    AnomalyEvent,
    AnomalyType,
    IrrigationEvent,
    Sample,
    SeriesMeta,
    SoilMoistureSeries,
    SpadeError,
    infer_interval,
    validate_report,
)

__all__ = [
    "AnalysisReport",
    "AnomalyEvent",
    "AnomalyType",
    "IrrigationEvent",
    "Sample",
    "SeriesMeta",
    "SoilMoistureSeries",
    "SpadeError",
    "infer_interval",
    "validate_report",
]

__version__ = "0.1.0"
