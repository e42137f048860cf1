"""Retrying gateway between the combination loop and a chat backend."""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass, field

from ..combiners import CombinerSpec
from ..data import HistoryWindow
from ..errors import BackendError, OutputParseError, TransientBackendError
from .backends import ChatRequest
from .prompts import build_prompt, parse_ensemble_output, strip_result_line

logger = logging.getLogger(__name__)


@dataclass
class ChatExchange:
    request: ChatRequest
    response_text: str
    latency_ms: int
    attempt: int
    error: str | None = None

    def transcript_record(self) -> dict:
        p = self.request.prompt
        digest = hashlib.sha256(
            json.dumps(
                {"system": p.system_preamble, "user": p.user_body, "model": self.request.model_id,
                 "temperature": self.request.temperature, "max_tokens": self.request.max_tokens},
                sort_keys=True,
            ).encode("utf-8")
        ).hexdigest()
        return {
            "target": p.target_label,
            "request_sha256": digest,
            "response_text": self.response_text,
            "attempt": self.attempt,
            "latency_ms": self.latency_ms,
        }


@dataclass
class EnsembleResult:
    value: float
    rationale: str
    exchanges: list[ChatExchange] = field(default_factory=list)

    @property
    def attempts(self) -> int:
        return self.exchanges[-1].attempt if self.exchanges else 0


class LLMGateway:
    """Builds prompts, calls the backend, parses and retries.

    Transport failures, rate limits, 5xx responses and unparseable replies
    are retried with exponential backoff up to ``retries`` attempts in total.
    """

    def __init__(
        self,
        backend,
        model_id: str = "mock",
        temperature: float = 0.0,
        max_tokens: int = 512,
        retries: int = 3,
        backoff_base: float = 1.0,
        max_inflight: int = 4,
        sleep=time.sleep,
    ):
        if retries < 1:
            raise ValueError("retries must be >= 1")
        self.backend = backend
        self.model_id = model_id
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.retries = retries
        self.backoff_base = backoff_base
        self.max_inflight = max_inflight
        self._sleep = sleep
        self._lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(max(1, max_inflight))
        self.transcript: list[dict] = []

    @property
    def backend_id(self) -> str:
        return getattr(self.backend, "backend_id", type(self.backend).__name__)

    def request_for(self, window: HistoryWindow, spec: CombinerSpec) -> ChatRequest:
        prompt = build_prompt(window, spec.components, spec.sentiment, spec.capture_rationale)
        return ChatRequest(
            prompt=prompt,
            temperature=self.temperature,
            max_tokens=self.max_tokens,
            model_id=self.model_id,
            window=window,
            components=spec.components,
            rule_params=spec.rule_params,
            rationale_requested=spec.capture_rationale,
        )

    def _call(self, request: ChatRequest) -> tuple[str, int]:
        if getattr(self.backend, "deterministic", False):
            return self.backend.chat(request), 0
        with self._slots:
            start = time.perf_counter()
            text = self.backend.chat(request)
            return text, int(round((time.perf_counter() - start) * 1000))

    def complete(self, request: ChatRequest) -> EnsembleResult:
        exchanges: list[ChatExchange] = []
        last_error: Exception | None = None
        for attempt in range(1, self.retries + 1):
            if attempt > 1:
                self._sleep(self.backoff_base * 2 ** (attempt - 2))
            try:
                text, latency = self._call(request)
            except (TransientBackendError, OutputParseError) as exc:
                logger.warning("%s attempt %d: %s", request.prompt.target_label, attempt, exc)
                exchanges.append(ChatExchange(request, "", 0, attempt, str(exc)))
                last_error = exc
                continue
            try:
                value = parse_ensemble_output(text)
            except OutputParseError as exc:
                logger.warning("%s attempt %d: %s", request.prompt.target_label, attempt, exc)
                exchanges.append(ChatExchange(request, text, latency, attempt, str(exc)))
                last_error = exc
                continue
            exchanges.append(ChatExchange(request, text, latency, attempt))
            self._record(exchanges)
            return EnsembleResult(value, strip_result_line(text), exchanges)
        self._record(exchanges)
        kind = OutputParseError if isinstance(last_error, OutputParseError) else BackendError
        raise kind(f"{request.prompt.target_label}: gave up after {self.retries} attempts: {last_error}")

    def _record(self, exchanges):
        with self._lock:
            self.transcript.extend(x.transcript_record() for x in exchanges)

    def ensemble(self, window: HistoryWindow, spec: CombinerSpec) -> EnsembleResult:
        return self.complete(self.request_for(window, spec))

    def transcript_jsonl(self) -> str:
        with self._lock:
            records = sorted(self.transcript, key=lambda r: (r["target"], r["attempt"], r["request_sha256"]))
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)

