"""The fixed window behind the golden prompt fixtures."""

from spf_combine.combiners import ALL_COMPONENTS, Component, Sentiment
from spf_combine.data import HistoryWindow, SurveyPeriod

P = SurveyPeriod.parse


def golden_window() -> HistoryWindow:
    q1, q2, q3 = P("1999Q1"), P("1999Q2"), P("1999Q3")
    return HistoryWindow(
        target=P("1999Q4"),
        window_len=3,
        truth_history=((q1, 2.2), (q2, 2.6), (q3, 3.1)),
        expert_histories={
            "1": ((q1, 2.0), (q2, 2.4), (q3, 2.9)),
            "4": ((q2, 2.2), (q3, 2.6)),
            "12": ((q1, 2.5), (q2, 2.5), (q3, 2.5)),
            "30": (),
        },
        current_forecasts={"12": 2.5, "1": 3.2, "30": 2.8, "4": 3.05},
    )


CASES = {
    "full": (ALL_COMPONENTS, Sentiment.NONE),
    "no_accuracy_weighting": (ALL_COMPONENTS - {Component.ACCURACY_WEIGHTING}, Sentiment.NONE),
    "no_lag_compensation": (ALL_COMPONENTS - {Component.LAG_COMPENSATION}, Sentiment.NONE),
    "no_trend_enhancement": (ALL_COMPONENTS - {Component.TREND_ENHANCEMENT}, Sentiment.NONE),
    "optimistic": (ALL_COMPONENTS, Sentiment.OPTIMISTIC),
    "neutral": (ALL_COMPONENTS, Sentiment.NEUTRAL),
    "pessimistic": (ALL_COMPONENTS, Sentiment.PESSIMISTIC),
}


def render(prompt) -> str:
    """Fixture layout: system preamble block (if any), then the user body."""
    out = ""
    if prompt.system_preamble:
        out += "[system]\n" + prompt.system_preamble + "\n[user]\n"
    return out + prompt.user_body
