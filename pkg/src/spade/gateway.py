"""Pluggable analysis backends with rate limiting and spend tracking.

Two backends share one wire shape (a single-turn chat completion): a remote
HTTP endpoint, and a deterministic local rules engine that runs the reference
detector on the prompt's data block. The local backend keeps the whole test
suite and the acceptance corpus network-free.

The API key is read from SPADE_API_KEY and the endpoint from the config or
SPADE_ENDPOINT.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass, field
from decimal import Decimal

import requests

from .core import Sample, SpadeError
from .detectors import (
    DetectorParams,
    compose_report,
    detect_anomalies,
    detect_irrigation,
)
from .ingest import parse_timestamp
from .promptkit import extract_data_block
from .report import render
from .segmenter import estimate_text_tokens

API_KEY_ENV = "SPADE_API_KEY"
ENDPOINT_ENV = "SPADE_ENDPOINT"

RETRY_ATTEMPTS = 3
BACKOFF_BASE_SECONDS = 1.0


class GatewayError(SpadeError):
    pass


@dataclass(frozen=True, slots=True)
class BackendConfig:
    kind: str = "local-rules"  # or "remote-http"
    endpoint: str = ""
    model_name: str = "local-rules"
    tpm_limit: int = 30_000
    max_inflight: int = 4
    price_in: float = 2.00  # USD per one million input tokens
    price_out: float = 8.00  # USD per one million output tokens

    def __post_init__(self) -> None:
        if self.kind not in ("remote-http", "local-rules"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.tpm_limit <= 0:
            raise ValueError("tpm_limit must be positive")
        if self.price_in < 0 or self.price_out < 0:
            raise ValueError("prices must be non-negative")
        if self.max_inflight < 1:
            raise ValueError("max_inflight must be at least 1")


@dataclass(frozen=True, slots=True)
class CostEstimate:
    input_tokens: int
    output_tokens: int
    input_cost: float
    output_cost: float
    total_cost: float

    def display(self) -> str:
        # 4-decimal USD rounding is for display only; stored costs are exact.
        return (
            f"in={self.input_tokens}t (${self.input_cost:.4f}) "
            f"out={self.output_tokens}t (${self.output_cost:.4f}) "
            f"total=${self.total_cost:.4f}"
        )


def estimate_cost(
    input_tokens: int, output_tokens: int, config: BackendConfig
) -> CostEstimate:
    """Exact cost arithmetic: tokens times USD-per-million price."""
    if input_tokens < 0 or output_tokens < 0:
        raise ValueError("token counts must be non-negative")
    million = Decimal(10) ** 6
    cost_in = Decimal(input_tokens) * Decimal(repr(config.price_in)) / million
    cost_out = Decimal(output_tokens) * Decimal(repr(config.price_out)) / million
    return CostEstimate(
        input_tokens=input_tokens,
        output_tokens=output_tokens,
        input_cost=float(cost_in),
        output_cost=float(cost_out),
        total_cost=float(cost_in + cost_out),
    )


class CostLedger:
    """Thread-safe accumulator of per-request cost estimates."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._entries: list[CostEstimate] = []

    def record(self, estimate: CostEstimate) -> None:
        with self._lock:
            self._entries.append(estimate)

    @property
    def entries(self) -> list[CostEstimate]:
        with self._lock:
            return list(self._entries)

    @property
    def total_cost(self) -> float:
        return float(sum(Decimal(repr(e.total_cost)) for e in self.entries))

    @property
    def total_tokens(self) -> tuple[int, int]:
        entries = self.entries
        return (
            sum(e.input_tokens for e in entries),
            sum(e.output_tokens for e in entries),
        )


class TokenRateLimiter:
    """Trailing-60-second token budget; acquire blocks until capacity frees.

    The clock and sleeper are injectable so tests can replay a simulated
    schedule; grant_log keeps every (time, tokens) grant for auditing.
    """

    WINDOW_SECONDS = 60.0

    def __init__(self, tpm_limit: int, clock=time.monotonic, sleeper=time.sleep):
        if tpm_limit <= 0:
            raise ValueError("tpm_limit must be positive")
        self.tpm_limit = tpm_limit
        self._clock = clock
        self._sleep = sleeper
        self._lock = threading.Lock()
        self._grants: list[tuple[float, int]] = []
        self.grant_log: list[tuple[float, int]] = []

    def acquire(self, tokens: int) -> None:
        if tokens > self.tpm_limit:
            raise GatewayError(
                f"request exceeds TPM ceiling: {tokens} > {self.tpm_limit}"
            )
        if tokens < 0:
            raise ValueError("tokens must be non-negative")
        while True:
            with self._lock:
                now = self._clock()
                horizon = now - self.WINDOW_SECONDS
                self._grants = [g for g in self._grants if g[0] > horizon]
                spent = sum(t for _, t in self._grants)
                if spent + tokens <= self.tpm_limit:
                    self._grants.append((now, tokens))
                    self.grant_log.append((now, tokens))
                    return
                wait = self._grants[0][0] + self.WINDOW_SECONDS - now
            self._sleep(max(wait, 0.001))


def acquire_budget(tokens: int, limiter: TokenRateLimiter) -> None:
    """Block until the trailing-window spend plus tokens fits the TPM limit."""
    limiter.acquire(tokens)


def _parse_data_block(block: str) -> list[Sample]:
    samples = []
    for lineno, raw in enumerate(block.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise GatewayError(f"malformed data line {lineno}: {line!r}")
        try:
            samples.append(Sample(parse_timestamp(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise GatewayError(f"malformed data line {lineno}: {exc}") from None
    if not samples:
        raise GatewayError("no data block: the data block is empty")
    return samples


class LocalRulesBackend:
    """Deterministic engine: detectors on the data block, rendered canonically."""

    def __init__(
        self,
        params: DetectorParams = DetectorParams(),
        *,
        suppress_irrigation: bool = True,
    ):
        self.params = params
        self.suppress_irrigation = suppress_irrigation

    def complete(self, prompt: str) -> tuple[str, int, int]:
        block = extract_data_block(prompt)
        samples = _parse_data_block(block)
        try:
            irrigation = detect_irrigation(samples, self.params)
        except SpadeError:
            irrigation = []  # segment shorter than the detector's horizon
        anomalies = detect_anomalies(
            samples,
            self.params,
            irrigation,
            suppress_irrigation=self.suppress_irrigation,
        )
        text = render(compose_report(irrigation, anomalies))
        return text, estimate_text_tokens(prompt), estimate_text_tokens(text)


class RemoteHttpBackend:
    """Single-turn chat completion over HTTPS with retry and backoff."""

    def __init__(
        self,
        config: BackendConfig,
        session: requests.Session | None = None,
        sleeper=time.sleep,
    ):
        self.config = config
        self.endpoint = config.endpoint or os.environ.get(ENDPOINT_ENV, "")
        if not self.endpoint:
            raise GatewayError(
                f"remote backend needs an endpoint (config or {ENDPOINT_ENV})"
            )
        self.session = session or requests.Session()
        self._sleep = sleeper

    def complete(self, prompt: str) -> tuple[str, int, int]:
        payload = {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        headers = {}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        last_error = None
        for attempt in range(RETRY_ATTEMPTS):
            if attempt:
                self._sleep(BACKOFF_BASE_SECONDS * 2 ** (attempt - 1))
            try:
                response = self.session.post(
                    self.endpoint, json=payload, headers=headers, timeout=120
                )
                if response.status_code >= 400:
                    last_error = f"HTTP {response.status_code}: {response.text[:200]}"
                    continue
                return self._unpack(response.json(), prompt)
            except requests.RequestException as exc:
                last_error = str(exc)
        raise GatewayError(
            f"backend request failed after {RETRY_ATTEMPTS} attempts: {last_error}"
        )

    def _unpack(self, data: dict, prompt: str) -> tuple[str, int, int]:
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise GatewayError("malformed backend response: no completion text") from None
        usage = data.get("usage") or {}
        in_tokens = usage.get("prompt_tokens") or estimate_text_tokens(prompt)
        out_tokens = usage.get("completion_tokens") or estimate_text_tokens(text)
        return text, int(in_tokens), int(out_tokens)


def make_backend(config: BackendConfig, **kwargs):
    if config.kind == "local-rules":
        return LocalRulesBackend(**kwargs)
    return RemoteHttpBackend(config, **kwargs)


def analyze(
    prompt: str,
    config: BackendConfig,
    *,
    backend=None,
    limiter: TokenRateLimiter | None = None,
    ledger: CostLedger | None = None,
) -> tuple[str, CostEstimate]:
    """Send one prompt; returns the verbatim response text and its cost.

    The rate limiter, when given, is consulted with the input-token estimate
    before the request goes out; it waits rather than failing.
    """
    if not prompt:
        raise GatewayError("prompt is empty")
    if backend is None:
        backend = make_backend(config)
    if limiter is not None:
        limiter.acquire(estimate_text_tokens(prompt))
    text, in_tokens, out_tokens = backend.complete(prompt)
    cost = estimate_cost(in_tokens, out_tokens, config)
    if ledger is not None:
        ledger.record(cost)
    return text, cost
