"""Chat-completion backends: an HTTP client and an offline deterministic mock."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Any

import httpx

from ..combiners import ALL_COMPONENTS, RuleParams, rule_based_details
from ..data import HistoryWindow
from ..errors import BackendConfigError, BackendError, OutputParseError, TransientBackendError
from .prompts import PromptText, format_result, prompt_target


@dataclass(frozen=True)
class ChatRequest:
    prompt: PromptText
    temperature: float = 0.0
    max_tokens: int = 512
    model_id: str = "mock"
    # Run context; never sent over the wire.
    window: HistoryWindow | None = field(default=None, compare=False)
    components: frozenset = ALL_COMPONENTS
    rule_params: RuleParams = RuleParams()
    rationale_requested: bool = False


class MockBackend:
    """Answers with the rule-based combination of the request's window.

    The prompt text is only consulted to find the target label, which must
    agree with the window carried in the request context.
    """

    deterministic = True
    backend_id = "mock"

    def __init__(self, decimals: int | None = 4):
        self.decimals = decimals
        self.calls = 0

    def chat(self, request: ChatRequest) -> str:
        self.calls += 1
        label = prompt_target(request.prompt.user_body)
        window = request.window
        if window is None:
            raise BackendError("mock backend needs the history window in the request context")
        if label != str(window.target):
            raise BackendError(f"prompt targets {label!r} but context window is {window.target}")
        out = rule_based_details(window, request.components, request.rule_params)
        result = format_result(out.value, self.decimals)
        if request.rationale_requested:
            return f"{out.rationale}\n{result}\n"
        return result + "\n"


class HttpBackend:
    """OpenAI-compatible chat-completions endpoint.

    The credential is read from the environment at construction so a missing
    key fails before any request is attempted.
    """

    deterministic = False

    def __init__(
        self,
        endpoint_url: str,
        model_id: str,
        api_key_env: str = "LLM_API_KEY",
        timeout: float = 60.0,
        transport: httpx.BaseTransport | None = None,
    ):
        if not endpoint_url:
            raise BackendConfigError("endpoint_url is not configured")
        key = os.environ.get(api_key_env, "").strip()
        if not key:
            raise BackendConfigError(f"missing API credential: environment variable {api_key_env} is not set")
        self.endpoint_url = endpoint_url
        self.model_id = model_id
        self.backend_id = f"http:{model_id}"
        self._client = httpx.Client(
            timeout=timeout,
            transport=transport,
            headers={"Authorization": f"Bearer {key}", "Content-Type": "application/json"},
        )

    def payload(self, request: ChatRequest) -> dict[str, Any]:
        return {
            "model": request.model_id or self.model_id,
            "messages": request.prompt.messages(),
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }

    def chat(self, request: ChatRequest) -> str:
        try:
            resp = self._client.post(self.endpoint_url, json=self.payload(request))
        except httpx.TransportError as exc:
            raise TransientBackendError(f"transport failure: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientBackendError(f"HTTP {resp.status_code} from {self.endpoint_url}")
        if not 200 <= resp.status_code < 300:
            raise BackendError(f"HTTP {resp.status_code} from {self.endpoint_url}: {resp.text[:200]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise OutputParseError(f"malformed chat-completion response: {resp.text[:200]}") from exc
        if not isinstance(content, str):
            raise OutputParseError(f"chat-completion content is {type(content).__name__}, not text")
        return content

    def close(self):
        self._client.close()
