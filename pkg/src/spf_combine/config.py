"""Experiment configuration: TOML file merged over packaged defaults."""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .combiners import Component, CombinerSpec, Method, RuleParams, Sentiment
from .data import Indicator, PanelSchema
from .econometrics import ConditionTerm, Dependent, ModelSpec, TermKind
from .errors import ConfigError
from .synth import SynthScenario

# Sections whose user value replaces the default wholesale instead of merging.
_REPLACED = {"combiners", "models"}


def default_config_text() -> str:
    return resources.files("spf_combine").joinpath("default_config.toml").read_text(encoding="utf-8")


_LEAF_TABLES = {"report.expected_signs"}

MODEL_FAMILIES = ("H1", "H1_MAE", "H2", "H2_MAE", "H3", "H3_Z", "H4", "H4_Z")


def _check_type(where: str, default: Any, value: Any) -> None:
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, (int, float)):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"config key {where!r}: expected {type(default).__name__}, got {value!r}")


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if not path and key in _REPLACED:
            out[key] = copy.deepcopy(value)
            continue
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        default = base[key]
        if isinstance(default, dict) and where not in _LEAF_TABLES:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a table")
            out[key] = _merge(default, value, where + ".")
        else:
            _check_type(where, default, value)
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class Config:
    raw: dict
    base_dir: Path
    output: Path
    panel_path: Path
    truth_path: Path
    schema: PanelSchema
    indicators: list[Indicator]
    horizons: list[int]
    window_len: int
    workers: int
    seed: int
    transcripts: bool
    combiners: list[CombinerSpec]
    rule_params: RuleParams
    backend: dict
    inattention_threshold: float
    repeat_tol: float
    regress: dict
    custom_models: dict
    expected_signs: dict
    synth: SynthScenario
    source: str = "<defaults>"

    @property
    def config_hash(self) -> str:
        hashed = copy.deepcopy(self.raw)
        hashed.get("run", {}).pop("output", None)
        return hashlib.sha256(json.dumps(hashed, sort_keys=True).encode("utf-8")).hexdigest()

    def with_output(self, output: Path | str) -> "Config":
        cfg = copy.copy(self)
        cfg.output = Path(output)
        if not self.raw["data"]["panel"]:
            cfg.panel_path = cfg.output / "data" / "panel.csv"
        if not self.raw["data"]["truth"]:
            cfg.truth_path = cfg.output / "data" / "truth.csv"
        return cfg

    @property
    def llm_needed(self) -> bool:
        return any(s.method is Method.LLM for s in self.combiners)


def _enum(cls, token, what):
    try:
        return cls(str(token).upper())
    except ValueError:
        raise ConfigError(f"{what}: unknown value {token!r}; choose from {[m.value for m in cls]}") from None


def parse_combiner(name: str, table: dict, window_len: int, rules: RuleParams) -> CombinerSpec:
    allowed = {"method", "components", "sentiment", "capture_rationale", "window_len"}
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"combiner {name!r}: unknown keys {sorted(unknown)}")
    if "method" not in table:
        raise ConfigError(f"combiner {name!r}: 'method' is required")
    method = _enum(Method, table["method"], f"combiner {name!r} method")
    comps = table.get("components", [c.value for c in Component])
    return CombinerSpec(
        method=method,
        window_len=int(table.get("window_len", window_len)),
        components=frozenset(_enum(Component, c, f"combiner {name!r} component") for c in comps),
        sentiment=_enum(Sentiment, table.get("sentiment", "NONE"), f"combiner {name!r} sentiment"),
        capture_rationale=bool(table.get("capture_rationale", False)),
        name=name,
        rule_params=rules,
    )


def parse_model(name: str, table: dict, regress: dict) -> ModelSpec:
    allowed = {"dependent", "include_truth", "method_dummy", "conditions", "fixed_effects",
               "indicators", "horizons", "baseline", "challenger", "method_label"}
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"model {name!r}: unknown keys {sorted(unknown)}")
    terms = []
    for c in table.get("conditions", []):
        if isinstance(c, str):
            c = {"name": c}
        terms.append(ConditionTerm(
            name=c["name"],
            kind=_enum(TermKind, c.get("kind", "BINARY"), f"model {name!r} condition kind"),
            interact_with_method=bool(c.get("interact", True)),
            column=c.get("column"),
        ))
    inds = table.get("indicators")
    try:
        return ModelSpec(
            name=name,
            dependent=_enum(Dependent, table.get("dependent", "LOG_APE"), f"model {name!r} dependent"),
            include_truth=bool(table.get("include_truth", True)),
            method_dummy=bool(table.get("method_dummy", True)),
            condition_terms=tuple(terms),
            fixed_effects=tuple(table.get("fixed_effects", ())),
            baseline=table.get("baseline", regress["baseline"]),
            challenger=table.get("challenger", regress["challenger"]),
            method_label=table.get("method_label", regress["method_label"]),
            indicators=tuple(Indicator.parse(i).value for i in inds) if inds is not None else None,
            horizons=tuple(int(h) for h in table["horizons"]) if "horizons" in table else None,
        )
    except ValueError as exc:
        raise ConfigError(f"model {name!r}: {exc}") from None


def build_config(user: dict | None = None, base_dir: Path | str = ".", source: str = "<defaults>") -> Config:
    defaults = tomllib.loads(default_config_text())
    raw = _merge(defaults, user or {})
    base_dir = Path(base_dir)

    def resolve(p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else base_dir / path

    data, run = raw["data"], raw["run"]
    output = resolve(run["output"])
    try:
        indicators = [Indicator.parse(i) for i in run["indicators"]]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    horizons = [int(h) for h in run["horizons"]]
    if any(h not in (1, 2) for h in horizons):
        raise ConfigError(f"horizons must be 1 or 2, got {horizons}")
    if run["window_len"] < 1:
        raise ConfigError("window_len must be >= 1")
    rules = RuleParams(**{k: raw["rules"][k] for k in ("eps", "lag_penalty", "min_lag_matches", "kappa")})
    combiners = [parse_combiner(n, t, run["window_len"], rules) for n, t in raw["combiners"].items()]
    if len(combiners) < 2:
        raise ConfigError("at least two combiners are required (a baseline and a challenger)")
    backend = raw["backend"]
    if backend["kind"] not in ("mock", "http"):
        raise ConfigError(f"backend.kind must be 'mock' or 'http', got {backend['kind']!r}")
    synth_raw = dict(raw["synth"])
    synth_raw["indicators"] = tuple(synth_raw["indicators"])
    synth_raw["horizons"] = tuple(synth_raw["horizons"])
    schema = PanelSchema(
        period=data["period_column"], indicator=data["indicator_column"], horizon=data["horizon_column"],
        forecaster=data["forecaster_column"], value=data["value_column"],
        truth_period=data["truth_period_column"], truth_indicator=data["truth_indicator_column"],
        truth_value=data["truth_value_column"],
    )
    custom = {n: parse_model(n, t, raw["regress"]) for n, t in raw.get("models", {}).items()}
    cfg = Config(
        raw=raw,
        base_dir=base_dir,
        output=output,
        panel_path=resolve(data["panel"]) if data["panel"] else output / "data" / "panel.csv",
        truth_path=resolve(data["truth"]) if data["truth"] else output / "data" / "truth.csv",
        schema=schema,
        indicators=indicators,
        horizons=horizons,
        window_len=run["window_len"],
        workers=max(1, int(run["workers"])),
        seed=int(run["seed"]),
        transcripts=bool(run["transcripts"]),
        combiners=combiners,
        rule_params=rules,
        backend=backend,
        inattention_threshold=float(raw["evaluate"]["inattention_threshold"]),
        repeat_tol=float(raw["evaluate"]["repeat_tol"]),
        regress=raw["regress"],
        custom_models=custom,
        expected_signs={str(k): int(v) for k, v in raw["report"]["expected_signs"].items()},
        synth=SynthScenario(**synth_raw),
        source=source,
    )
    unknown = [m for m in raw["regress"]["models"] if m not in MODEL_FAMILIES]
    if unknown:
        raise ConfigError(f"regress.models: unknown families {unknown}; choose from {list(MODEL_FAMILIES)}")
    labels = [s.label for s in combiners]
    for key in ("baseline", "challenger"):
        if raw["regress"][key] not in labels:
            raise ConfigError(f"regress.{key} = {raw['regress'][key]!r} is not a configured combiner {labels}")
    return cfg


def load_config(path: Path | str | None = None) -> Config:
    if path is None:
        return build_config()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        user = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return build_config(user, path.parent, str(path))
