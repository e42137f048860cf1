"""Per-period panel metrics and forecast error measures."""

from __future__ import annotations

import csv
import io
import logging
import math
import statistics
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import AlignedDataset, Indicator, SurveyPeriod
from .errors import DegenerateStandardization, InsufficientCrossSection, MetricError, UndefinedMetric

logger = logging.getLogger(__name__)

REPEAT_TOL = 1e-9
LOG_FLOOR = 1e-6
INATTENTION_THRESHOLD = 0.1


def disagreement(forecasts: Sequence[float]) -> float:
    """Cross-sectional sample standard deviation (``N - 1`` denominator)."""
    f = np.asarray(forecasts, dtype=float)
    if f.size < 2:
        raise InsufficientCrossSection(f"disagreement needs at least 2 forecasts, got {f.size}")
    if not np.all(np.isfinite(f)):
        raise MetricError("disagreement: non-finite forecast")
    return float(np.std(f, ddof=1))


def inattentiveness(
    current: Mapping[str, float], previous: Mapping[str, float], tol: float = REPEAT_TOL
) -> float:
    """Share of forecasters repeating last round's number.

    Only forecasters present in both rounds count towards the denominator.
    """
    common = [k for k in current if k in previous]
    if not common:
        raise UndefinedMetric("inattentiveness undefined: no forecaster answered both rounds")
    repeats = sum(1 for k in common if abs(current[k] - previous[k]) <= tol)
    return repeats / len(common)


def ape(forecast: float, truth: float) -> float:
    if truth == 0:
        raise UndefinedMetric("APE undefined for a realized value of zero")
    return abs(forecast - truth) / abs(truth)


def mae(forecasts: Sequence[float], truths: Sequence[float]) -> float:
    if len(forecasts) != len(truths):
        raise MetricError(f"length mismatch: {len(forecasts)} forecasts vs {len(truths)} truths")
    if len(forecasts) == 0:
        raise MetricError("mae of an empty series")
    return math.fsum(abs(f - y) for f, y in zip(forecasts, truths)) / len(forecasts)


def zscore(values: Sequence[float]) -> list[float]:
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        raise DegenerateStandardization("zscore needs at least 2 values")
    sd = float(np.std(x, ddof=1))
    if sd == 0 or not math.isfinite(sd):
        raise DegenerateStandardization("zscore of a series with zero variance")
    return list((x - x.mean()) / sd)


def log_floor(x: float, floor: float = LOG_FLOOR) -> float:
    return math.log(max(x, floor))


@dataclass(frozen=True)
class AboveMedian:
    pass


@dataclass(frozen=True)
class AboveThreshold:
    threshold: float


def binarize(series: Mapping, rule) -> dict:
    """Flag entries strictly above the series median or a fixed threshold."""
    if not series:
        raise MetricError("binarize: empty series")
    if isinstance(rule, AboveMedian):
        cut = statistics.median(series.values())
    elif isinstance(rule, AboveThreshold):
        cut = rule.threshold
    else:
        raise TypeError(f"unknown binarization rule {rule!r}")
    return {k: v > cut for k, v in series.items()}


@dataclass(frozen=True)
class PeriodMetrics:
    period: SurveyPeriod
    n_experts: int
    disagreement: float | None
    inattentiveness: float | None
    truth: float


@dataclass(frozen=True)
class ConditionFlags:
    period: SurveyPeriod
    disagreement_high: bool | None
    inattentive_high: bool | None
    disagreement_z: float | None
    inattentiveness_z: float | None


def period_metrics(dataset: AlignedDataset, tol: float = REPEAT_TOL) -> list[PeriodMetrics]:
    """Disagreement and inattentiveness for every evaluable period.

    Inattentiveness compares with the immediately preceding quarter; it is
    absent when that quarter was not surveyed or shares no forecaster.
    """
    panel = dataset.panel
    surveyed = set(panel.periods)
    out = []
    for period in dataset.evaluable_periods:
        current = panel.forecasts_at(period)
        try:
            sigma = disagreement(list(current.values()))
        except InsufficientCrossSection:
            sigma = None
        prev = period.prev()
        lam = None
        if prev in surveyed:
            try:
                lam = inattentiveness(current, panel.forecasts_at(prev), tol)
            except UndefinedMetric:
                lam = None
        out.append(PeriodMetrics(period, len(current), sigma, lam, dataset.truth.values[period]))
    return out


def _safe_z(series: Mapping) -> dict:
    if len(series) < 2:
        return {}
    try:
        return dict(zip(series, zscore(list(series.values()))))
    except DegenerateStandardization:
        logger.warning("zero-variance condition series; z-scores left empty")
        return {}


def condition_flags(
    metrics: Iterable[PeriodMetrics], inattention_threshold: float = INATTENTION_THRESHOLD
) -> dict[SurveyPeriod, ConditionFlags]:
    """Binary and standardized condition variables for one (indicator, horizon) slice."""
    metrics = list(metrics)
    sig = {m.period: m.disagreement for m in metrics if m.disagreement is not None}
    lam = {m.period: m.inattentiveness for m in metrics if m.inattentiveness is not None}
    sig_high = binarize(sig, AboveMedian()) if sig else {}
    lam_high = binarize(lam, AboveThreshold(inattention_threshold)) if lam else {}
    sig_z = _safe_z(sig)
    lam_z = _safe_z(lam)
    return {
        m.period: ConditionFlags(
            m.period,
            sig_high.get(m.period),
            lam_high.get(m.period),
            sig_z.get(m.period),
            lam_z.get(m.period),
        )
        for m in metrics
    }


METRICS_COLUMNS = [
    "period", "indicator", "horizon", "n_experts", "disagreement", "inattentiveness",
    "truth", "disagreement_high", "inattentive_high",
]


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def metrics_csv(
    rows: Iterable[tuple[Indicator, int, PeriodMetrics, ConditionFlags]],
) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(METRICS_COLUMNS)
    for indicator, horizon, m, flags in rows:
        writer.writerow([
            str(m.period), indicator.value, horizon, m.n_experts, _cell(m.disagreement),
            _cell(m.inattentiveness), _cell(m.truth), _cell(flags.disagreement_high),
            _cell(flags.inattentive_high),
        ])
    return out.getvalue()
