"""Prompt construction and the strict ``Ensemble Result: <value>`` output grammar."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ..combiners import ALL_COMPONENTS, Component, Sentiment, ordered
from ..data import HistoryWindow
from ..errors import OutputParseError

RESULT_MARKER = "Ensemble Result:"
FORMAT_CLAUSE = "Output must strictly follow this format"

RULE_TEXT = {
    Component.ACCURACY_WEIGHTING: (
        "Historical Accuracy Weighting: Consider each expert's prediction accuracy "
        "and historical performance for dynamic weighting."
    ),
    Component.LAG_COMPENSATION: (
        "Lag Compensation: Detect and calibrate for temporal lags in expert historical performance."
    ),
    Component.TREND_ENHANCEMENT: "Trend Enhancement: Incorporate recent historical value trends.",
}

SENTIMENT_PREAMBLE = {
    Sentiment.NONE: "",
    Sentiment.OPTIMISTIC: "You have a more positive outlook on the future market.",
    Sentiment.NEUTRAL: "You have a more neutral outlook on the future market.",
    Sentiment.PESSIMISTIC: "You have a more negative outlook on the future market.",
}

_NUMBER_WORDS = {1: "one", 2: "two", 3: "three", 4: "four", 5: "five", 6: "six",
                 7: "seven", 8: "eight", 9: "nine", 10: "ten", 11: "eleven", 12: "twelve"}

_TARGET_RE = re.compile(r"ensemble forecast for (\d{4}Q[1-4])")
_RESULT_LINE_RE = re.compile(r"^\s*Ensemble Result:(.*)$")
_DECIMAL_RE = re.compile(r"^[+-]?(?:\d+(?:\.\d*)?|\.\d+)$", re.ASCII)


@dataclass(frozen=True)
class PromptText:
    system_preamble: str
    user_body: str
    target_label: str

    def messages(self) -> list[dict[str, str]]:
        msgs = []
        if self.system_preamble:
            msgs.append({"role": "system", "content": self.system_preamble})
        msgs.append({"role": "user", "content": self.user_body})
        return msgs


def forecaster_sort_key(forecaster: str):
    """Numeric ids sort numerically (SPF ids are integers), the rest lexically after them."""
    return (0, int(forecaster), "") if forecaster.isdigit() else (1, 0, forecaster)


def _v(x: float) -> str:
    # shortest round-trip digits, at least one decimal (2.0, 3.05)
    return np.format_float_positional(float(x), unique=True, trim="0")


def format_data(window: HistoryWindow) -> str:
    lines = ["Historical true values:"]
    if window.truth_history:
        lines += [f"{p}: {_v(v)}" for p, v in window.truth_history]
    else:
        lines.append("(none available)")
    lines.append("Expert prediction sequences:")
    names = sorted(window.current_forecasts, key=forecaster_sort_key)
    for f in names:
        hist = window.expert_histories.get(f, ())
        seq = ", ".join(f"({p}, {_v(v)})" for p, v in hist) if hist else "(no previous forecasts)"
        lines.append(f"Expert {f}: {seq}")
    lines.append(f"Current expert forecasts for {window.target}:")
    lines += [f"Expert {f}: {_v(window.current_forecasts[f])}" for f in names]
    return "\n".join(lines)


def build_prompt(
    window: HistoryWindow,
    components: Iterable[Component] = ALL_COMPONENTS,
    sentiment: Sentiment = Sentiment.NONE,
    rationale_requested: bool = False,
) -> PromptText:
    label = str(window.target)
    span = _NUMBER_WORDS.get(window.window_len, str(window.window_len))
    quarters = "quarter" if window.window_len == 1 else "quarters"
    rules = [RULE_TEXT[c] for c in ordered(components)]
    intro = (
        "You are provided with ECB forecast data, including historical true values "
        f"and expert prediction sequences for the past {span} {quarters}. "
    )
    if rules:
        intro += f"Please generate an ensemble forecast for {label} following these rules:"
    else:
        intro += f"Please generate an ensemble forecast for {label}."
    parts = [intro]
    parts += [f"{i}. {text}" for i, text in enumerate(rules, start=1)]
    parts.append(
        "Please generate an ensemble forecast based on the following data "
        "(expert sets may vary by quarter):\n" + format_data(window)
    )
    if rationale_requested:
        parts.append(
            "Before the final line, explain step by step how you assigned weights to the experts "
            "and synthesized their forecasts.\n"
            f"{FORMAT_CLAUSE} on its final line:\n{RESULT_MARKER} <value>"
        )
    else:
        parts.append(f"{FORMAT_CLAUSE} with no additional fields:\n{RESULT_MARKER} <value>")
    return PromptText(SENTIMENT_PREAMBLE[sentiment], "\n\n".join(parts) + "\n", label)


def prompt_target(user_body: str) -> str | None:
    m = _TARGET_RE.search(user_body)
    return m.group(1) if m else None


def format_result(value: float, decimals: int | None = 4) -> str:
    if decimals is None:
        return f"{RESULT_MARKER} {np.format_float_positional(value, unique=True, trim='-')}"
    return f"{RESULT_MARKER} {value:.{decimals}f}"


def parse_ensemble_output(text: str) -> float:
    """Number on the last ``Ensemble Result:`` line of a model reply."""
    token = None
    for line in str(text).splitlines():
        m = _RESULT_LINE_RE.match(line)
        if m:
            token = m.group(1).strip()
    if token is None:
        raise OutputParseError("no 'Ensemble Result:' line in model output")
    if not _DECIMAL_RE.match(token):
        raise OutputParseError(f"'Ensemble Result:' followed by non-numeric token {token!r}")
    value = float(token)
    if not math.isfinite(value):
        raise OutputParseError(f"non-finite ensemble result {token!r}")
    return value


def strip_result_line(text: str) -> str:
    """Reply text without its result line(s); used as the captured rationale."""
    kept = [line for line in str(text).splitlines() if not _RESULT_LINE_RE.match(line)]
    return "\n".join(kept).strip()
