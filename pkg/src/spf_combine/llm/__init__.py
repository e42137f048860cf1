from .backends import ChatRequest, HttpBackend, MockBackend
from .gateway import ChatExchange, EnsembleResult, LLMGateway
from .prompts import PromptText, build_prompt, format_result, parse_ensemble_output

__all__ = [
    "ChatExchange", "ChatRequest", "EnsembleResult", "HttpBackend", "LLMGateway", "MockBackend",
    "PromptText", "build_prompt", "format_result", "parse_ensemble_output",
]
