"""Forecast combination methods and the per-dataset combination loop."""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from .data import AlignedDataset, HistoryWindow, Indicator, SurveyPeriod, window_slice
from .errors import (
    BackendConfigError,
    BackendError,
    ColdStartError,
    DataError,
    SpfCombineError,
    WindowError,
)

logger = logging.getLogger(__name__)


class Method(enum.Enum):
    SIMPLE_AVG = "SIMPLE_AVG"
    MEDIAN = "MEDIAN"
    RULE_BASED = "RULE_BASED"
    LLM = "LLM"


class Component(enum.Enum):
    # Declaration order is the rule order used in prompts and rationales.
    ACCURACY_WEIGHTING = "ACCURACY_WEIGHTING"
    LAG_COMPENSATION = "LAG_COMPENSATION"
    TREND_ENHANCEMENT = "TREND_ENHANCEMENT"


ALL_COMPONENTS = frozenset(Component)


def ordered(components: Iterable[Component]) -> list[Component]:
    chosen = set(components)
    return [c for c in Component if c in chosen]


class Sentiment(enum.Enum):
    NONE = "NONE"
    OPTIMISTIC = "OPTIMISTIC"
    NEUTRAL = "NEUTRAL"
    PESSIMISTIC = "PESSIMISTIC"


@dataclass(frozen=True)
class RuleParams:
    eps: float = 1e-6
    lag_penalty: float = 0.5
    min_lag_matches: int = 2
    kappa: float = 0.25


@dataclass(frozen=True)
class CombinerSpec:
    method: Method
    window_len: int = 3
    components: frozenset = ALL_COMPONENTS
    sentiment: Sentiment = Sentiment.NONE
    capture_rationale: bool = False
    name: str | None = None
    rule_params: RuleParams = RuleParams()

    def __post_init__(self):
        object.__setattr__(self, "components", frozenset(self.components))
        if self.window_len < 1:
            raise ValueError("window_len must be >= 1")

    @property
    def label(self) -> str:
        return self.name or self.method.value


@dataclass
class CombinationRun:
    spec: CombinerSpec
    indicator: Indicator | None = None
    horizon: int | None = None
    results: dict[SurveyPeriod, float] = field(default_factory=dict)
    rationales: dict[SurveyPeriod, str] = field(default_factory=dict)
    skipped: list[tuple[SurveyPeriod, str]] = field(default_factory=list)
    outliers: set[SurveyPeriod] = field(default_factory=set)
    exchanges: list = field(default_factory=list)


class AllPeriodsSkipped(SpfCombineError):
    def __init__(self, message, run):
        super().__init__(message)
        self.run = run


def simple_average(current_forecasts: Mapping[str, float]) -> float:
    values = list(current_forecasts.values())
    if not values:
        raise ValueError("simple_average of no forecasts")
    return math.fsum(values) / len(values)


def median_combine(current_forecasts: Mapping[str, float]) -> float:
    values = list(current_forecasts.values())
    if not values:
        raise ValueError("median of no forecasts")
    return float(statistics.median(values))


class RuleOutcome(NamedTuple):
    value: float
    rationale: str
    weights: dict[str, float]
    base: float
    shift: float
    lagged: tuple[str, ...]
    window_mae: dict[str, float]


def _sign(x: float) -> int:
    return (x > 0) - (x < 0)


def window_mae(window: HistoryWindow) -> dict[str, float]:
    """Each forecaster's mean absolute error over window quarters with a known outcome."""
    truth = window.truth_by_period
    out = {}
    for f, hist in window.expert_histories.items():
        errs = [abs(v - truth[p]) for p, v in hist if p in truth]
        if errs:
            out[f] = math.fsum(errs) / len(errs)
    return out


def lag_matches(window: HistoryWindow, forecaster: str) -> int:
    """Revisions whose direction repeats the previous quarter's realized move.

    A transition into quarter ``s`` counts when the forecaster answered both
    ``s-1`` and ``s`` and the outcomes of ``s-2`` and ``s-1`` are in the
    window. Only nonzero moves can match.
    """
    truth = window.truth_by_period
    seq = list(window.expert_histories.get(forecaster, ())) + [
        (window.target, window.current_forecasts[forecaster])
    ]
    matches = 0
    for (p0, f0), (p1, f1) in zip(seq, seq[1:]):
        if p1.index - p0.index != 1:
            continue
        before = p0.prev()
        if p0 not in truth or before not in truth:
            continue
        revision = _sign(f1 - f0)
        move = _sign(truth[p0] - truth[before])
        if revision != 0 and revision == move:
            matches += 1
    return matches


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def rule_based_details(
    window: HistoryWindow,
    components: Iterable[Component] = ALL_COMPONENTS,
    params: RuleParams = RuleParams(),
) -> RuleOutcome:
    comps = set(components)
    current = dict(window.current_forecasts)
    names = sorted(current)
    n = len(names)
    header = f"Combined {n} expert forecast(s) for {window.target}."
    if not window.truth_history:
        value = simple_average(current)
        weights = {f: 1.0 / n for f in names}
        return RuleOutcome(value, f"{header}\ncold-start: no realized values in the window, simple average used.",
                           weights, value, 0.0, (), {})

    maes = window_mae(window)
    sections = [header]

    uniform = not (Component.ACCURACY_WEIGHTING in comps and maes)
    if not uniform:
        raw = {f: 1.0 / (maes[f] + params.eps) for f in names if f in maes}
        fill = math.fsum(raw.values()) / len(raw)
        raw.update({f: fill for f in names if f not in raw})
    else:
        raw = {f: 1.0 for f in names}
    total = math.fsum(raw[f] for f in names)
    weights = {f: raw[f] / total for f in names}

    if Component.ACCURACY_WEIGHTING in comps:
        down = [f for f in names if weights[f] < 1.0 / n - 1e-12]
        if down:
            detail = ", ".join(f"{f} (MAE {_fmt(maes[f])})" if f in maes else f"{f} (no history)" for f in down)
            sections.append(f"Historical accuracy weighting: down-weighted {detail}.")
        else:
            sections.append("Historical accuracy weighting: no expert down-weighted.")

    lagged: list[str] = []
    if Component.LAG_COMPENSATION in comps:
        if maes:
            cut = statistics.median(maes.values())
            lagged = [
                f for f in names
                if f in maes and maes[f] > cut and lag_matches(window, f) >= params.min_lag_matches
            ]
        uniform = uniform and not lagged
        for f in lagged:
            weights[f] *= params.lag_penalty
        total = math.fsum(weights[f] for f in names)
        weights = {f: weights[f] / total for f in names}
        if lagged:
            sections.append(f"Lag compensation: lagged responders {', '.join(lagged)} had weights halved.")
        else:
            sections.append("Lag compensation: no lagged responders detected.")

    # Equal weights reduce to the plain mean, computed the same way as simple_average.
    base = simple_average(current) if uniform else math.fsum(weights[f] * current[f] for f in names)

    shift = 0.0
    if Component.TREND_ENHANCEMENT in comps:
        tv = window.truth_values
        mean = math.fsum(tv) / len(tv)
        shift = params.kappa * (tv[-1] - mean)
        sections.append(
            f"Trend enhancement: last realized {_fmt(tv[-1])} vs window mean {_fmt(mean)}, "
            f"shift {shift:+.4f}."
        )
    value = base + shift
    return RuleOutcome(value, "\n".join(sections), weights, base, shift, tuple(lagged), maes)


def rule_based_combine(
    window: HistoryWindow,
    components: Iterable[Component] = ALL_COMPONENTS,
    params: RuleParams = RuleParams(),
) -> tuple[float, str]:
    out = rule_based_details(window, components, params)
    return out.value, out.rationale


def outlier_bounds(current_forecasts: Mapping[str, float]) -> tuple[float, float]:
    values = np.asarray(list(current_forecasts.values()), dtype=float)
    sigma = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return float(values.min() - 3 * sigma), float(values.max() + 3 * sigma)


def _window_for(dataset: AlignedDataset, period: SurveyPeriod, window_len: int) -> HistoryWindow:
    try:
        return window_slice(dataset, period, window_len)
    except ColdStartError as exc:
        return exc.window


def _combine_one(dataset, period, spec, gateway):
    """Returns (value, rationale, exchanges)."""
    window = _window_for(dataset, period, spec.window_len)
    if spec.method is Method.SIMPLE_AVG:
        return simple_average(window.current_forecasts), None, []
    if spec.method is Method.MEDIAN:
        return median_combine(window.current_forecasts), None, []
    if spec.method is Method.RULE_BASED:
        out = rule_based_details(window, spec.components, spec.rule_params)
        return out.value, out.rationale if spec.capture_rationale else None, []
    result = gateway.ensemble(window, spec)
    return result.value, result.rationale if spec.capture_rationale else None, result.exchanges


def run_combiner(dataset: AlignedDataset, spec: CombinerSpec, gateway=None, max_inflight: int = 1) -> CombinationRun:
    """Combine forecasts for every evaluable period of ``dataset``.

    Each period only sees data dated before it plus its own expert forecasts.
    Periods that fail are recorded in ``skipped`` rather than aborting the run.
    """
    if spec.method is Method.LLM and gateway is None:
        raise BackendConfigError("LLM combiner requires a gateway")
    run = CombinationRun(spec, dataset.indicator, dataset.horizon)
    periods = list(dataset.evaluable_periods)

    def attempt(period):
        try:
            return period, _combine_one(dataset, period, spec, gateway), None
        except BackendConfigError:
            raise
        except (BackendError, WindowError) as exc:
            return period, None, f"{type(exc).__name__}: {exc}"

    parallel = spec.method is Method.LLM and max_inflight > 1 and not spec.capture_rationale
    if parallel:
        with ThreadPoolExecutor(max_workers=max_inflight) as pool:
            outcomes = list(pool.map(attempt, periods))
    else:
        outcomes = [attempt(p) for p in periods]

    for period, res, reason in sorted(outcomes, key=lambda o: o[0]):
        if res is None:
            run.skipped.append((period, reason))
            logger.info("%s %s: skipped %s (%s)", spec.label, dataset.indicator.value, period, reason)
            continue
        value, rationale, exchanges = res
        if not math.isfinite(value):
            run.skipped.append((period, "non-finite combined value"))
            continue
        run.results[period] = value
        if rationale is not None:
            run.rationales[period] = rationale
        run.exchanges.extend(exchanges)
        lo, hi = outlier_bounds(dataset.panel.forecasts_at(period))
        if not lo <= value <= hi:
            run.outliers.add(period)
            logger.warning("%s %s: value %.4f outside [%.4f, %.4f]", spec.label, period, value, lo, hi)
    if not run.results:
        raise AllPeriodsSkipped(
            f"{spec.label} {dataset.indicator.value} h={dataset.horizon}: all {len(periods)} periods skipped", run
        )
    return run


COMBINED_COLUMNS = ["period", "indicator", "horizon", "method", "value", "flagged_outlier", "skipped_reason"]


def combination_csv(runs: Iterable[CombinationRun]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(COMBINED_COLUMNS)
    for run in runs:
        rows = [(p, repr(v), int(p in run.outliers), "") for p, v in run.results.items()]
        rows += [(p, "", 0, reason) for p, reason in run.skipped]
        for p, value, flag, reason in sorted(rows, key=lambda r: r[0]):
            writer.writerow([str(p), run.indicator.value, run.horizon, run.spec.label, value, flag, reason])
    return out.getvalue()


def rationale_jsonl(runs: Iterable[CombinationRun]) -> str:
    lines = []
    for run in runs:
        for p in sorted(run.rationales):
            lines.append(json.dumps({"period": str(p), "method": run.spec.label, "rationale": run.rationales[p]}))
    return "".join(line + "\n" for line in lines)


def read_combination_csv(stream) -> dict[tuple[Indicator, int, str], dict[SurveyPeriod, float]]:
    """Combined values keyed by (indicator, horizon, method label); skipped rows are left out."""
    from .data import _open_text

    out: dict = {}
    for rec in csv.DictReader(_open_text(stream)):
        key = (Indicator.parse(rec["indicator"]), int(rec["horizon"]), rec["method"])
        series = out.setdefault(key, {})
        if rec["value"] == "":
            continue
        try:
            series[SurveyPeriod.parse(rec["period"])] = float(rec["value"])
        except ValueError as exc:
            raise DataError(f"bad combined-forecast row {rec}: {exc}") from None
    return out
