"""Experiment commands. Each one reads its inputs from files and writes its outputs under the run directory."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from . import synth as synth_mod
from .combiners import (
    AllPeriodsSkipped,
    CombinationRun,
    CombinerSpec,
    Component,
    Method,
    Sentiment,
    combination_csv,
    rationale_jsonl,
    read_combination_csv,
    run_combiner,
)
from .config import Config
from .data import AlignedDataset, Indicator, align, parse_panel_csv, parse_truth_csv
from .econometrics import ConditionTerm, Dependent, ModelSpec, RegressionTable, TermKind, fit_model
from .errors import (
    AlignmentError,
    BackendError,
    ConfigError,
    DataError,
    EstimationError,
)
from .llm import HttpBackend, LLMGateway, MockBackend
from .metrics import condition_flags, metrics_csv, period_metrics

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"

ANALYSIS_COLUMNS = [
    "period", "year", "indicator", "horizon", "method", "forecast", "truth", "ape", "abs_error",
    "n_experts", "disagreement", "inattentiveness", "disagreement_high", "inattentive_high",
    "disagreement_z", "inattentiveness_z",
]


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(cfg: Config, command: str, extra: dict | None = None, backend_id: str | None = None) -> dict:
    """Hash every file under the output directory into ``manifest.json``.

    ``bundle_sha256`` covers file contents only, so identical inputs give an
    identical bundle hash regardless of when they ran.
    """
    out = cfg.output
    mpath = out / MANIFEST
    previous = json.loads(mpath.read_text()) if mpath.exists() else {}
    files = {
        p.relative_to(out).as_posix(): _sha256(p)
        for p in sorted(out.rglob("*"))
        if p.is_file() and p != mpath
    }
    bundle = hashlib.sha256(json.dumps(files, sort_keys=True).encode("utf-8")).hexdigest()
    commands = previous.get("commands", {})
    entry = {"utc": datetime.now(timezone.utc).isoformat(timespec="seconds"), "config_sha256": cfg.config_hash}
    if backend_id:
        entry["backend"] = backend_id
    if extra:
        entry.update(extra)
    commands[command] = entry
    manifest = {
        "config_sha256": cfg.config_hash,
        "config_source": cfg.source,
        "files": files,
        "bundle_sha256": bundle,
        "commands": commands,
    }
    _write(mpath, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# ---------------------------------------------------------------- data loading


def load_datasets(cfg: Config) -> dict[tuple[Indicator, int], AlignedDataset]:
    for p in (cfg.panel_path, cfg.truth_path):
        if not p.is_file():
            raise ConfigError(f"data file not found: {p}")
    with open(cfg.panel_path, "rb") as fh:
        panels = parse_panel_csv(fh, cfg.schema, cfg.indicators, cfg.horizons)
    with open(cfg.truth_path, "rb") as fh:
        truths = parse_truth_csv(fh, cfg.schema)
    datasets = {}
    for (ind, h), panel in panels.items():
        if ind not in truths:
            logger.warning("%s: no realized values, panel h=%d skipped", ind.value, h)
            continue
        try:
            datasets[(ind, h)] = align(panel, truths[ind])
        except AlignmentError as exc:
            logger.warning("%s", exc)
    if not datasets:
        raise DataError("no (indicator, horizon) panel could be aligned with realized values")
    return datasets


def make_gateway(cfg: Config, transport=None) -> LLMGateway:
    b = cfg.backend
    if b["kind"] == "mock":
        backend = MockBackend(decimals=b["mock_decimals"] if b["mock_decimals"] >= 0 else None)
    else:
        backend = HttpBackend(b["endpoint_url"], b["model_id"], b["api_key_env"], b["timeout"], transport=transport)
    return LLMGateway(
        backend,
        model_id=b["model_id"],
        temperature=b["temperature"],
        max_tokens=b["max_tokens"],
        retries=b["retries"],
        backoff_base=b["backoff_base"],
        max_inflight=b["max_inflight"],
    )


# ---------------------------------------------------------------- combine


@dataclass
class CombineResult:
    runs: list[CombinationRun]
    failures: list[dict] = field(default_factory=list)
    backend_id: str | None = None

    @property
    def exit_code(self) -> int:
        if not self.failures:
            return 0
        return 3 if any(f["kind"] == "backend" for f in self.failures) else 2


def combine_all(cfg: Config, datasets, specs: list[CombinerSpec], gateway=None) -> CombineResult:
    """One run per (indicator, horizon, spec); a failing run never aborts the others."""
    if gateway is None and any(s.method is Method.LLM for s in specs):
        gateway = make_gateway(cfg)
    jobs = [(key, spec) for key in sorted(datasets, key=lambda k: (k[0].value, k[1])) for spec in specs]
    inflight = gateway.max_inflight if gateway is not None else 1

    def job(item):
        key, spec = item
        try:
            return run_combiner(datasets[key], spec, gateway, max_inflight=inflight), None
        except AllPeriodsSkipped as exc:
            kind = "backend" if spec.method is Method.LLM else "data"
            return None, {"indicator": key[0].value, "horizon": key[1], "method": spec.label,
                          "kind": kind, "error": str(exc)}
        except (BackendError, DataError) as exc:
            kind = "backend" if isinstance(exc, BackendError) else "data"
            return None, {"indicator": key[0].value, "horizon": key[1], "method": spec.label,
                          "kind": kind, "error": f"{type(exc).__name__}: {exc}"}

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        outcomes = list(pool.map(job, jobs))
    result = CombineResult([], [], gateway.backend_id if gateway is not None else None)
    for run, failure in outcomes:
        if run is not None:
            result.runs.append(run)
        else:
            logger.error("run failed: %s", failure)
            result.failures.append(failure)
    return result


def _write_runs(cfg: Config, subdir: str, result: CombineResult) -> None:
    d = cfg.output / subdir
    _write(d / "combined.csv", combination_csv(result.runs))
    rationales = rationale_jsonl(result.runs)
    if rationales:
        _write(d / "rationales.jsonl", rationales)
    if cfg.transcripts:
        records = [x.transcript_record() | {"method": r.spec.label, "indicator": r.indicator.value, "horizon": r.horizon}
                   for r in result.runs for x in r.exchanges]
        if records:
            records.sort(key=lambda t: (t["indicator"], t["horizon"], t["method"], t["target"], t["attempt"]))
            _write(d / "transcripts.jsonl", "".join(json.dumps(t, sort_keys=True) + "\n" for t in records))
    if result.failures:
        _write(d / "failures.json", json.dumps(result.failures, indent=2, sort_keys=True) + "\n")


def cmd_combine(cfg: Config, gateway=None) -> CombineResult:
    datasets = load_datasets(cfg)
    result = combine_all(cfg, datasets, cfg.combiners, gateway)
    _write_runs(cfg, "combine", result)
    write_manifest(cfg, "combine", {"runs": len(result.runs), "failures": len(result.failures)}, result.backend_id)
    return result


# ---------------------------------------------------------------- evaluate


def _f(v):
    return np.nan if v is None else float(v)


def analysis_table(
    datasets, series: dict, inattention_threshold: float = 0.1, repeat_tol: float = 1e-9
) -> tuple[pd.DataFrame, str]:
    """Long table with one row per (indicator, horizon, period, method), plus the metrics CSV text."""
    rows, metric_rows = [], []
    for key in sorted(datasets, key=lambda k: (k[0].value, k[1])):
        ds = datasets[key]
        metrics = period_metrics(ds, repeat_tol)
        flags = condition_flags(metrics, inattention_threshold)
        metric_rows += [(key[0], key[1], m, flags[m.period]) for m in metrics]
        by_period = {m.period: m for m in metrics}
        for (ind, h, method), values in sorted(series.items(), key=lambda kv: (kv[0][0].value, kv[0][1], kv[0][2])):
            if (ind, h) != key:
                continue
            for period in sorted(values):
                if period not in by_period:
                    continue
                m, fl = by_period[period], flags[period]
                forecast = values[period]
                err = abs(forecast - m.truth)
                rows.append({
                    "period": str(period), "year": period.year, "indicator": ind.value, "horizon": h,
                    "method": method, "forecast": forecast, "truth": m.truth,
                    "ape": err / abs(m.truth) if m.truth != 0 else np.nan,
                    "abs_error": err, "n_experts": m.n_experts,
                    "disagreement": _f(m.disagreement), "inattentiveness": _f(m.inattentiveness),
                    "disagreement_high": _f(fl.disagreement_high), "inattentive_high": _f(fl.inattentive_high),
                    "disagreement_z": _f(fl.disagreement_z), "inattentiveness_z": _f(fl.inattentiveness_z),
                })
    table = pd.DataFrame(rows, columns=ANALYSIS_COLUMNS)
    if table.empty:
        raise DataError("combined forecasts share no period with the evaluable data")
    return table, metrics_csv(metric_rows)


def _table_csv(df: pd.DataFrame) -> str:
    return df.to_csv(index=False, lineterminator="\n", float_format="%.17g")


def cmd_evaluate(cfg: Config, combined_path: Path | None = None, subdir: str = "evaluate") -> pd.DataFrame:
    datasets = load_datasets(cfg)
    combined_path = combined_path or cfg.output / "combine" / "combined.csv"
    if not combined_path.is_file():
        raise ConfigError(f"combined forecasts not found: {combined_path} (run `combine` first)")
    with open(combined_path, "rb") as fh:
        series = read_combination_csv(fh)
    table, metrics_text = analysis_table(datasets, series, cfg.inattention_threshold, cfg.repeat_tol)
    _write(cfg.output / subdir / "analysis.csv", _table_csv(table))
    _write(cfg.output / subdir / "metrics.csv", metrics_text)
    write_manifest(cfg, "evaluate", {"rows": len(table)})
    return table


def read_analysis(path: Path) -> pd.DataFrame:
    if not path.is_file():
        raise ConfigError(f"analysis table not found: {path} (run `evaluate` first)")
    return pd.read_csv(path, dtype={"period": str, "indicator": str, "method": str})


# ---------------------------------------------------------------- regress


def model_catalog(cfg: Config, challenger: str | None = None, method_label: str | None = None) -> dict[str, list[ModelSpec]]:
    """Built-in model families, each expanded over the configured horizons (and indicators for H2)."""
    reg = cfg.regress
    common = dict(
        baseline=reg["baseline"],
        challenger=challenger or reg["challenger"],
        method_label=method_label or reg["method_label"],
    )
    dis_b = ConditionTerm("Disagreement", TermKind.BINARY)
    dis_z = ConditionTerm("Disagreement", TermKind.CONTINUOUS_Z)
    ina_b = ConditionTerm("Inattentiveness", TermKind.BINARY)
    ina_z = ConditionTerm("Inattentiveness", TermKind.CONTINUOUS_Z)
    pooled = {
        "H1": (Dependent.LOG_APE, ()),
        "H1_MAE": (Dependent.LOG_MAE, ()),
        "H3": (Dependent.LOG_APE, (dis_b,)),
        "H3_Z": (Dependent.LOG_APE, (dis_z,)),
        "H4": (Dependent.LOG_APE, (ina_b,)),
        "H4_Z": (Dependent.LOG_APE, (ina_z,)),
    }
    out: dict[str, list[ModelSpec]] = {}
    for fam, (dep, terms) in pooled.items():
        out[fam] = [
            ModelSpec(name=f"{fam}_h{h}", dependent=dep, condition_terms=terms, horizons=(h,), **common)
            for h in cfg.horizons
        ]
    for fam, dep in (("H2", Dependent.LOG_APE), ("H2_MAE", Dependent.LOG_MAE)):
        out[fam] = [
            ModelSpec(name=f"{fam}_{ind.value}_h{h}", dependent=dep, indicators=(ind.value,), horizons=(h,), **common)
            for h in cfg.horizons
            for ind in cfg.indicators
        ]
    return out


def selected_models(cfg: Config) -> list[ModelSpec]:
    catalog = model_catalog(cfg)
    chosen = []
    for family in cfg.regress["models"]:
        if family not in catalog:
            raise ConfigError(f"unknown model family {family!r}; choose from {sorted(catalog)}")
        chosen += catalog[family]
    chosen += list(cfg.custom_models.values())
    return chosen


def fit_all(analysis: pd.DataFrame, models: list[ModelSpec]) -> tuple[dict[str, RegressionTable], dict[str, str]]:
    tables, errors = {}, {}
    for spec in models:
        try:
            tables[spec.name] = fit_model(analysis, spec)
        except (EstimationError, DataError) as exc:
            logger.warning("model %s not estimable: %s", spec.name, exc)
            errors[spec.name] = f"{type(exc).__name__}: {exc}"
    return tables, errors


def _write_tables(cfg: Config, subdir: str, tables: dict[str, RegressionTable], errors: dict[str, str]) -> None:
    d = cfg.output / subdir
    for name, table in tables.items():
        _write(d / f"{name}.csv", table.to_csv())
        _write(d / f"{name}.json", table.to_json())
    if errors:
        _write(d / "errors.json", json.dumps(errors, indent=2, sort_keys=True) + "\n")


def cmd_regress(cfg: Config, analysis: pd.DataFrame | None = None, models: list[ModelSpec] | None = None):
    if analysis is None:
        analysis = read_analysis(cfg.output / "evaluate" / "analysis.csv")
    models = selected_models(cfg) if models is None else models
    tables, errors = fit_all(analysis, models)
    _write_tables(cfg, "regress", tables, errors)
    write_manifest(cfg, "regress", {"models": sorted(tables), "not_estimable": sorted(errors)})
    return tables, errors


# ---------------------------------------------------------------- ablate / sentiment


def _challenger_spec(cfg: Config) -> CombinerSpec:
    for s in cfg.combiners:
        if s.label == cfg.regress["challenger"]:
            return s
    raise ConfigError(f"challenger {cfg.regress['challenger']!r} not configured")


def _baseline_spec(cfg: Config) -> CombinerSpec:
    for s in cfg.combiners:
        if s.label == cfg.regress["baseline"]:
            return s
    raise ConfigError(f"baseline {cfg.regress['baseline']!r} not configured")


def ablation_specs(base: CombinerSpec) -> list[CombinerSpec]:
    return [
        dataclasses.replace(base, components=base.components - {c}, name=f"{base.label}-no_{c.value}")
        for c in Component
        if c in base.components
    ]


def cmd_ablate(cfg: Config, gateway=None):
    """Rerun the challenger with each prompt component removed and fit H1 (log APE and log MAE) for each."""
    datasets = load_datasets(cfg)
    full = _challenger_spec(cfg)
    variants = ablation_specs(full)
    specs = [_baseline_spec(cfg), full] + variants
    result = combine_all(cfg, datasets, specs, gateway)
    _write_runs(cfg, "ablate", result)
    series = {(r.indicator, r.horizon, r.spec.label): r.results for r in result.runs}
    analysis, _ = analysis_table(datasets, series, cfg.inattention_threshold, cfg.repeat_tol)
    _write(cfg.output / "ablate" / "analysis.csv", _table_csv(analysis))
    tables, errors = {}, {}
    for spec in [full] + variants:
        for h in cfg.horizons:
            for dep, tag in ((Dependent.LOG_APE, "APE"), (Dependent.LOG_MAE, "MAE")):
                m = ModelSpec(
                    name=f"{spec.label}_H1_{tag}_h{h}", dependent=dep, horizons=(h,),
                    baseline=cfg.regress["baseline"], challenger=spec.label,
                    method_label=cfg.regress["method_label"],
                )
                t, e = fit_all(analysis, [m])
                tables.update(t)
                errors.update(e)
    _write_tables(cfg, "ablate/tables", tables, errors)
    write_manifest(cfg, "ablate", {"variants": [s.label for s in variants]}, result.backend_id)
    return result, tables


def sentiment_specs(base: CombinerSpec) -> list[CombinerSpec]:
    return [
        dataclasses.replace(base, sentiment=s, name=f"{base.label}-{s.value}")
        for s in (Sentiment.OPTIMISTIC, Sentiment.NEUTRAL, Sentiment.PESSIMISTIC)
    ]


def cmd_sentiment(cfg: Config, gateway=None):
    datasets = load_datasets(cfg)
    base = _challenger_spec(cfg)
    if base.method is not Method.LLM:
        raise ConfigError("sentiment framing applies to an LLM challenger only")
    specs = sentiment_specs(base)
    result = combine_all(cfg, datasets, specs, gateway)
    _write_runs(cfg, "sentiment", result)
    by_key = {(r.indicator, r.horizon, r.spec.sentiment): r for r in result.runs}
    for (ind, h), ds in sorted(datasets.items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
        frame = {"period": [str(p) for p in ds.evaluable_periods],
                 "truth": [ds.truth.values[p] for p in ds.evaluable_periods]}
        for s in (Sentiment.OPTIMISTIC, Sentiment.NEUTRAL, Sentiment.PESSIMISTIC):
            run = by_key.get((ind, h, s))
            frame[s.value.lower()] = [run.results.get(p, np.nan) if run else np.nan for p in ds.evaluable_periods]
        _write(cfg.output / "sentiment" / f"sentiment_{ind.value}_h{h}.csv", _table_csv(pd.DataFrame(frame)))
    write_manifest(cfg, "sentiment", {"runs": len(result.runs)}, result.backend_id)
    return result


# ---------------------------------------------------------------- synth / report


def cmd_synth(cfg: Config, seed: int | None = None):
    seed = cfg.seed if seed is None else seed
    data = synth_mod.generate(seed, cfg.synth)
    _write(cfg.output / "data" / "panel.csv", data.panel_csv())
    _write(cfg.output / "data" / "truth.csv", data.truth_csv())
    lag = {f"{k[0].value}_h{k[1]}": v for k, v in sorted(data.lag1_experts.items(), key=lambda kv: (kv[0][0].value, kv[0][1]))}
    _write(cfg.output / "data" / "lag1_experts.json", json.dumps(lag, indent=2, sort_keys=True) + "\n")
    write_manifest(cfg, "synth", {"seed": seed, "scenario": cfg.synth.as_dict()})
    return data


def _sign(x: float) -> int:
    return int(math.copysign(1, x)) if x != 0 else 0


def cmd_report(cfg: Config):
    """Plot data (realized vs combined per indicator/horizon) and a coefficient summary across tables."""
    combined = cfg.output / "combine" / "combined.csv"
    if combined.is_file():
        datasets = load_datasets(cfg)
        with open(combined, "rb") as fh:
            series = read_combination_csv(fh)
        for (ind, h), ds in sorted(datasets.items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
            frame = {"period": [str(p) for p in ds.evaluable_periods],
                     "truth": [ds.truth.values[p] for p in ds.evaluable_periods]}
            for (i2, h2, method), vals in sorted(series.items(), key=lambda kv: kv[0][2]):
                if (i2, h2) == (ind, h):
                    frame[method] = [vals.get(p, np.nan) for p in ds.evaluable_periods]
            _write(cfg.output / "report" / f"plot_{ind.value}_h{h}.csv", _table_csv(pd.DataFrame(frame)))
    rows = []
    for sub in ("regress", "ablate/tables"):
        for path in sorted((cfg.output / sub).glob("*.json")):
            if path.name == "errors.json":
                continue
            t = json.loads(path.read_text())
            for r in t["rows"]:
                expected = cfg.expected_signs.get(r["term"])
                rows.append({
                    "source": sub, "model": t["model"], "dependent": t["dependent"], "term": r["term"],
                    "coef": r["coef"], "se": r["se"], "p_value": r["p_value"], "stars": r["stars"],
                    "sign": _sign(r["coef"]), "significant_5pct": int(r["p_value"] < 0.05),
                    "expected_sign": "" if expected is None else expected,
                    "sign_agrees": "" if expected is None else int(_sign(r["coef"]) == expected),
                    "n_obs": t["n_obs"], "n_clusters": t["n_clusters"],
                })
    if rows:
        _write(cfg.output / "report" / "summary.csv",
               pd.DataFrame(rows).to_csv(index=False, lineterminator="\n", float_format="%.6g"))
    manifest = write_manifest(cfg, "report", {"summary_rows": len(rows)})
    return rows, manifest
