"""Synthetic survey panels and error tables for tests and offline demos.

Expert behaviour types:

* attentive experts forecast the realized value plus a personal bias and noise;
* lag-1 responders anchor on the previous quarter's realized value;
* any expert may repeat last quarter's number (inattentive repeat);
* cells go missing at random (attrition), so the panel is unbalanced.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from .data import (
    ForecastPanel,
    Indicator,
    SurveyPeriod,
    TruthSeries,
    format_panel_csv,
    format_truth_csv,
)

# level, AR coefficient, shock sd of the realized series
_TRUTH_PROCESS = {
    Indicator.GDP_GROWTH: (1.6, 0.85, 0.7),
    Indicator.HICP_INFLATION: (2.0, 0.85, 0.5),
    Indicator.UNEMPLOYMENT: (8.5, 0.9, 0.4),
}


@dataclass(frozen=True)
class SynthScenario:
    n_quarters: int = 40
    n_experts: int = 20
    start: str = "1999Q1"
    indicators: tuple[str, ...] = ("GDP",)
    horizons: tuple[int, ...] = (1,)
    lag1_share: float = 0.4
    bias_sd: float = 0.15
    noise_sd: float = 0.15
    repeat_prob: float = 0.1
    attrition_prob: float = 0.1
    horizon2_noise_scale: float = 1.5
    decimals: int = 1

    def as_dict(self) -> dict:
        d = asdict(self)
        d["indicators"] = list(self.indicators)
        d["horizons"] = list(self.horizons)
        return d


@dataclass
class SynthData:
    panels: dict[tuple[Indicator, int], ForecastPanel]
    truths: dict[Indicator, TruthSeries]
    lag1_experts: dict[tuple[Indicator, int], list[str]] = field(default_factory=dict)

    def panel_csv(self) -> str:
        return format_panel_csv(self.panels[k] for k in sorted(self.panels, key=lambda k: (k[0].value, k[1])))

    def truth_csv(self) -> str:
        return format_truth_csv(self.truths[k] for k in sorted(self.truths, key=lambda k: k.value))


def _truth_path(rng, indicator: Indicator, n: int) -> np.ndarray:
    level, phi, sd = _TRUTH_PROCESS[indicator]
    y = np.empty(n + 1)
    y[0] = level
    for t in range(1, n + 1):
        y[t] = level + phi * (y[t - 1] - level) + sd * rng.standard_normal()
    return y


def generate(seed: int, scenario: SynthScenario = SynthScenario()) -> SynthData:
    rng = np.random.default_rng(seed)
    start = SurveyPeriod.parse(scenario.start)
    periods = [start.shift(i) for i in range(scenario.n_quarters)]
    experts = [str(i + 1) for i in range(scenario.n_experts)]
    n_lag = int(round(scenario.lag1_share * scenario.n_experts))
    panels, truths, lagged = {}, {}, {}
    for token in scenario.indicators:
        indicator = Indicator.parse(token)
        # y[0] is the quarter before the first survey; realized values are rounded like published data.
        y = np.round(_truth_path(rng, indicator, scenario.n_quarters), scenario.decimals)
        truths[indicator] = TruthSeries(indicator, {p: float(y[i + 1]) for i, p in enumerate(periods)})
        for h in scenario.horizons:
            scale = scenario.horizon2_noise_scale if h == 2 else 1.0
            order = rng.permutation(scenario.n_experts)
            lag_set = {experts[i] for i in order[:n_lag]}
            bias = rng.normal(0.0, scenario.bias_sd * scale, scenario.n_experts)
            cells: dict[tuple[SurveyPeriod, str], float] = {}
            last: dict[str, float] = {}
            for t, period in enumerate(periods):
                noise = rng.normal(0.0, scenario.noise_sd * scale, scenario.n_experts)
                missing = rng.random(scenario.n_experts) < scenario.attrition_prob
                repeat = rng.random(scenario.n_experts) < scenario.repeat_prob
                answered = 0
                for j, e in enumerate(experts):
                    if missing[j]:
                        last.pop(e, None)
                        continue
                    anchor = y[t] if e in lag_set else y[t + 1]
                    value = round(float(anchor + bias[j] + noise[j]), scenario.decimals)
                    if repeat[j] and e in last:
                        value = last[e]
                    cells[(period, e)] = value
                    last[e] = value
                    answered += 1
                if answered == 0:
                    # keep every round populated
                    cells[(period, experts[0])] = round(float(y[t + 1]), scenario.decimals)
                    last[experts[0]] = cells[(period, experts[0])]
            panels[(indicator, h)] = ForecastPanel(indicator, h, periods, experts, cells)
            lagged[(indicator, h)] = sorted(lag_set, key=int)
    return SynthData(panels, truths, lagged)


def planted_effect_records(
    rng: np.random.Generator,
    method_effect: float = -0.12,
    intercept: float = -0.77,
    truth_effect: float = -0.15,
    n_years: int = 25,
    quarters_per_year: int = 4,
    year_sd: float = 0.3,
    noise_sd: float = 0.35,
    challenger: str = "LLM",
    baseline: str = "SIMPLE_AVG",
) -> pd.DataFrame:
    """Analysis-table rows whose log APE follows a known linear model.

    Errors share a year-level shock, so inference must be clustered by year.
    """
    rows = []
    start = 1999
    for yi in range(n_years):
        year_shock = rng.normal(0.0, year_sd)
        for q in range(1, quarters_per_year + 1):
            period = SurveyPeriod(start + yi, q)
            truth = float(rng.normal(1.5, 1.5))
            if truth == 0:
                truth = 1e-3
            for method, z in ((baseline, 0.0), (challenger, 1.0)):
                log_ape = intercept + method_effect * z + truth_effect * truth + year_shock + rng.normal(0.0, noise_sd)
                a = float(np.exp(log_ape))
                rows.append({
                    "period": str(period), "year": period.year, "indicator": "GDP", "horizon": 1,
                    "method": method, "forecast": truth + a * abs(truth), "truth": truth,
                    "ape": a, "abs_error": a * abs(truth),
                })
    return pd.DataFrame(rows)
