"""Survey panel ingestion, alignment with realized values, and history windows."""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
import re
from dataclasses import dataclass
from types import MappingProxyType
from typing import IO, Iterable, Mapping

from .errors import (
    AlignmentError,
    ColdStartError,
    CsvFormatError,
    DuplicateCellError,
    PeriodFormatError,
    WindowError,
)

logger = logging.getLogger(__name__)

_PERIOD_RE = re.compile(r"^\s*(\d{4})\s*[Qq]\s*([1-4])\s*$")


@dataclass(frozen=True, order=True)
class SurveyPeriod:
    year: int
    quarter: int

    def __post_init__(self):
        if not 1 <= self.quarter <= 4:
            raise PeriodFormatError(f"quarter must be in 1..4, got {self.quarter}")

    @classmethod
    def parse(cls, token: str) -> "SurveyPeriod":
        m = _PERIOD_RE.match(str(token))
        if m is None:
            raise PeriodFormatError(f"unparseable survey period {token!r} (expected YYYYQq)")
        return cls(int(m.group(1)), int(m.group(2)))

    @classmethod
    def from_index(cls, index: int) -> "SurveyPeriod":
        return cls(index // 4, index % 4 + 1)

    @property
    def index(self) -> int:
        """Quarters since year 0, so consecutive quarters differ by one."""
        return self.year * 4 + self.quarter - 1

    def shift(self, n: int) -> "SurveyPeriod":
        return SurveyPeriod.from_index(self.index + n)

    def next(self) -> "SurveyPeriod":
        return self.shift(1)

    def prev(self) -> "SurveyPeriod":
        return self.shift(-1)

    def __str__(self) -> str:
        return f"{self.year}Q{self.quarter}"


class Indicator(enum.Enum):
    GDP_GROWTH = "GDP"
    HICP_INFLATION = "HICP"
    UNEMPLOYMENT = "UNEMP"

    @classmethod
    def parse(cls, token: str) -> "Indicator":
        token = str(token).strip()
        for member in cls:
            if token.upper() in (member.value, member.name):
                return member
        raise ValueError(f"unknown indicator {token!r}")


@dataclass(frozen=True)
class PanelSchema:
    """Column names of the panel and truth CSV files."""

    period: str = "survey_round"
    indicator: str = "indicator"
    horizon: str = "horizon_years"
    forecaster: str = "forecaster_id"
    value: str = "forecast"
    truth_period: str = "period"
    truth_indicator: str = "indicator"
    truth_value: str = "value"


@dataclass(frozen=True)
class ForecastPanel:
    indicator: Indicator
    horizon: int
    periods: tuple[SurveyPeriod, ...]
    forecasters: tuple[str, ...]
    cells: Mapping[tuple[SurveyPeriod, str], float]

    def __post_init__(self):
        periods = tuple(self.periods)
        if any(b <= a for a, b in zip(periods, periods[1:])):
            raise ValueError("panel periods must be strictly increasing")
        cells = dict(self.cells)
        for key, value in cells.items():
            if not math.isfinite(value):
                raise ValueError(f"non-finite forecast at {key}")
        object.__setattr__(self, "periods", periods)
        object.__setattr__(self, "forecasters", tuple(self.forecasters))
        object.__setattr__(self, "cells", MappingProxyType(cells))
        counts = {p: 0 for p in periods}
        for p, _ in cells:
            if p not in counts:
                raise ValueError(f"cell references period {p} outside the panel")
            counts[p] += 1
        empty = [p for p, n in counts.items() if n == 0]
        if empty:
            raise ValueError(f"periods without any forecast: {[str(p) for p in empty]}")
        by_period: dict[SurveyPeriod, dict[str, float]] = {p: {} for p in periods}
        for (p, f), v in sorted(cells.items()):
            by_period[p][f] = v
        object.__setattr__(self, "_by_period", by_period)

    def get(self, period: SurveyPeriod, forecaster: str) -> float | None:
        return self.cells.get((period, forecaster))

    def forecasts_at(self, period: SurveyPeriod) -> dict[str, float]:
        return dict(self._by_period.get(period, {}))

    @property
    def n_present(self) -> int:
        return len(self.cells)

    @property
    def n_absent(self) -> int:
        return len(self.periods) * len(self.forecasters) - len(self.cells)

    def triples(self) -> list[tuple[SurveyPeriod, str, float]]:
        return sorted((p, f, v) for (p, f), v in self.cells.items())


@dataclass(frozen=True)
class TruthSeries:
    indicator: Indicator
    values: Mapping[SurveyPeriod, float]

    def __post_init__(self):
        values = dict(sorted(self.values.items()))
        for period, value in values.items():
            if not math.isfinite(value):
                raise ValueError(f"non-finite realized value at {period}")
        object.__setattr__(self, "values", MappingProxyType(values))

    def get(self, period: SurveyPeriod) -> float | None:
        return self.values.get(period)


@dataclass(frozen=True)
class AlignedDataset:
    panel: ForecastPanel
    truth: TruthSeries
    evaluable_periods: tuple[SurveyPeriod, ...]

    @property
    def indicator(self) -> Indicator:
        return self.panel.indicator

    @property
    def horizon(self) -> int:
        return self.panel.horizon


@dataclass(frozen=True)
class HistoryWindow:
    target: SurveyPeriod
    window_len: int
    truth_history: tuple[tuple[SurveyPeriod, float], ...]
    expert_histories: Mapping[str, tuple[tuple[SurveyPeriod, float], ...]]
    current_forecasts: Mapping[str, float]
    indicator: Indicator | None = None
    horizon: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "truth_history", tuple(self.truth_history))
        object.__setattr__(
            self,
            "expert_histories",
            MappingProxyType({k: tuple(v) for k, v in sorted(self.expert_histories.items())}),
        )
        object.__setattr__(
            self, "current_forecasts", MappingProxyType(dict(sorted(self.current_forecasts.items())))
        )
        if not self.current_forecasts:
            raise WindowError(f"window for {self.target} has no current forecasts")

    @property
    def truth_values(self) -> list[float]:
        return [v for _, v in self.truth_history]

    @property
    def truth_by_period(self) -> dict[SurveyPeriod, float]:
        return dict(self.truth_history)

    @property
    def forecasters(self) -> list[str]:
        return list(self.current_forecasts)

    @property
    def is_cold_start(self) -> bool:
        return not self.truth_history and not any(self.expert_histories.values())

    def latest_period(self) -> SurveyPeriod | None:
        """Latest period referenced by any history entry."""
        dated = [p for p, _ in self.truth_history]
        for hist in self.expert_histories.values():
            dated.extend(p for p, _ in hist)
        return max(dated) if dated else None


def _open_text(stream: IO[bytes] | IO[str] | bytes | str) -> IO[str]:
    if isinstance(stream, bytes):
        return io.StringIO(stream.decode("utf-8-sig"))
    if isinstance(stream, str):
        return io.StringIO(stream)
    sample = stream.read()
    if isinstance(sample, bytes):
        sample = sample.decode("utf-8-sig")
    return io.StringIO(sample)


def _read_rows(stream, required: Iterable[str]):
    reader = csv.reader(_open_text(stream))
    try:
        header = next(reader)
    except StopIteration:
        raise CsvFormatError("empty CSV (no header)", line=1) from None
    header = [h.strip() for h in header]
    missing = [c for c in required if c not in header]
    if missing:
        raise CsvFormatError(f"missing columns {missing}; header is {header}", line=1)
    for row in reader:
        line = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise CsvFormatError(f"expected {len(header)} fields, got {len(row)}", line=line)
        yield line, dict(zip(header, (cell.strip() for cell in row)))


def _parse_value(token: str, line: int) -> float | None:
    if token == "":
        return None
    try:
        value = float(token)
    except ValueError:
        raise CsvFormatError(f"unparseable number {token!r}", line=line) from None
    if not math.isfinite(value):
        raise CsvFormatError(f"non-finite number {token!r}", line=line)
    return value


def parse_panel_csv(
    stream,
    schema: PanelSchema = PanelSchema(),
    indicators: Iterable[Indicator] | None = None,
    horizons: Iterable[int] | None = None,
) -> dict[tuple[Indicator, int], ForecastPanel]:
    """Parse a long-format survey CSV into one panel per (indicator, horizon).

    Empty forecast fields become absent cells. Rounds in which nobody
    answered are dropped with a warning. ``indicators``/``horizons`` restrict
    which panels are built; by default every combination found is returned.
    """
    wanted_ind = set(indicators) if indicators is not None else None
    wanted_h = set(horizons) if horizons is not None else None
    raw: dict[tuple[Indicator, int], dict[tuple[SurveyPeriod, str], float | None]] = {}
    required = (schema.period, schema.indicator, schema.horizon, schema.forecaster, schema.value)
    for line, rec in _read_rows(stream, required):
        try:
            period = SurveyPeriod.parse(rec[schema.period])
        except PeriodFormatError as exc:
            raise PeriodFormatError(f"line {line}: {exc}") from None
        try:
            indicator = Indicator.parse(rec[schema.indicator])
        except ValueError as exc:
            raise CsvFormatError(str(exc), line=line) from None
        try:
            horizon = int(rec[schema.horizon])
        except ValueError:
            raise CsvFormatError(f"unparseable horizon {rec[schema.horizon]!r}", line=line) from None
        if horizon not in (1, 2):
            raise CsvFormatError(f"horizon must be 1 or 2 years, got {horizon}", line=line)
        if (wanted_ind is not None and indicator not in wanted_ind) or (
            wanted_h is not None and horizon not in wanted_h
        ):
            continue
        forecaster = rec[schema.forecaster]
        if not forecaster:
            raise CsvFormatError("empty forecaster id", line=line)
        value = _parse_value(rec[schema.value], line)
        cells = raw.setdefault((indicator, horizon), {})
        key = (period, forecaster)
        if key in cells and cells[key] != value:
            raise DuplicateCellError(
                f"line {line}: conflicting duplicate for ({period}, {forecaster}): "
                f"{cells[key]!r} vs {value!r}"
            )
        cells[key] = value

    panels = {}
    for (indicator, horizon), cells in sorted(raw.items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
        present = {k: v for k, v in cells.items() if v is not None}
        all_periods = sorted({p for p, _ in cells})
        answered = {p for p, _ in present}
        dropped = [p for p in all_periods if p not in answered]
        if dropped:
            logger.warning(
                "%s h=%d: dropping %d round(s) with zero responses: %s",
                indicator.value, horizon, len(dropped), ", ".join(map(str, dropped)),
            )
        periods = [p for p in all_periods if p in answered]
        if not periods:
            logger.warning("%s h=%d: no responses at all, panel skipped", indicator.value, horizon)
            continue
        forecasters = sorted({f for _, f in cells})
        panels[(indicator, horizon)] = ForecastPanel(indicator, horizon, periods, forecasters, present)
    return panels


def parse_truth_csv(stream, schema: PanelSchema = PanelSchema()) -> dict[Indicator, TruthSeries]:
    raw: dict[Indicator, dict[SurveyPeriod, float]] = {}
    required = (schema.truth_period, schema.truth_indicator, schema.truth_value)
    for line, rec in _read_rows(stream, required):
        try:
            period = SurveyPeriod.parse(rec[schema.truth_period])
        except PeriodFormatError as exc:
            raise PeriodFormatError(f"line {line}: {exc}") from None
        try:
            indicator = Indicator.parse(rec[schema.truth_indicator])
        except ValueError as exc:
            raise CsvFormatError(str(exc), line=line) from None
        value = _parse_value(rec[schema.truth_value], line)
        if value is None:
            continue
        series = raw.setdefault(indicator, {})
        if period in series and series[period] != value:
            raise DuplicateCellError(f"line {line}: conflicting realized values for {indicator.value} {period}")
        series[period] = value
    return {ind: TruthSeries(ind, vals) for ind, vals in raw.items()}


def format_panel_csv(panels: Iterable[ForecastPanel], schema: PanelSchema = PanelSchema()) -> str:
    """Inverse of :func:`parse_panel_csv` for present cells (full float precision)."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow([schema.period, schema.indicator, schema.horizon, schema.forecaster, schema.value])
    for panel in panels:
        for period, forecaster, value in panel.triples():
            writer.writerow([str(period), panel.indicator.value, panel.horizon, forecaster, repr(value)])
    return out.getvalue()


def format_truth_csv(series: Iterable[TruthSeries], schema: PanelSchema = PanelSchema()) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow([schema.truth_period, schema.truth_indicator, schema.truth_value])
    for s in series:
        for period, value in s.values.items():
            writer.writerow([str(period), s.indicator.value, repr(value)])
    return out.getvalue()


def align(panel: ForecastPanel, truth: TruthSeries) -> AlignedDataset:
    if panel.indicator != truth.indicator:
        raise AlignmentError(
            f"indicator mismatch: panel is {panel.indicator.value}, truth is {truth.indicator.value}"
        )
    evaluable = [p for p in panel.periods if p in truth.values]
    if not evaluable:
        raise AlignmentError(
            f"{panel.indicator.value} h={panel.horizon}: no period has both forecasts and a realized value"
        )
    return AlignedDataset(panel, truth, tuple(evaluable))


def window_slice(dataset: AlignedDataset, target: SurveyPeriod, window_len: int = 3) -> HistoryWindow:
    """History visible when combining forecasts for ``target``.

    The window covers the ``window_len`` calendar quarters preceding the
    target. Only forecasters who answered at the target are included; each
    one's history holds the quarters they actually answered (gaps are left
    out, never imputed). Raises :class:`ColdStartError` when nothing at all
    precedes the target; the error carries the empty-history window.
    """
    if window_len < 1:
        raise WindowError(f"window_len must be >= 1, got {window_len}")
    panel = dataset.panel
    current = panel.forecasts_at(target)
    if not current:
        raise WindowError(f"no forecasts for target {target}")
    prior = [target.shift(-k) for k in range(window_len, 0, -1)]
    truth_history = [(p, dataset.truth.values[p]) for p in prior if p in dataset.truth.values]
    histories = {
        f: [(p, panel.cells[(p, f)]) for p in prior if (p, f) in panel.cells] for f in current
    }
    window = HistoryWindow(
        target=target,
        window_len=window_len,
        truth_history=truth_history,
        expert_histories=histories,
        current_forecasts=current,
        indicator=panel.indicator,
        horizon=panel.horizon,
    )
    if window.is_cold_start:
        raise ColdStartError(f"cold start at {target}: no data in the {window_len} prior quarters", window)
    return window
