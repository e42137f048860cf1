"""Log-error regressions with dummy fixed effects and year-clustered (CR1) inference."""

from __future__ import annotations

import enum
import io
import csv
import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.linalg as scl
import scipy.stats as scs

from .errors import CollinearityError, EstimationError
from .metrics import LOG_FLOOR

logger = logging.getLogger(__name__)


class Dependent(enum.Enum):
    LOG_APE = "LOG_APE"
    LOG_MAE = "LOG_MAE"


class TermKind(enum.Enum):
    BINARY = "BINARY"
    CONTINUOUS_Z = "CONTINUOUS_Z"


# (condition name, kind) -> analysis-table column
CONDITION_COLUMNS = {
    ("Disagreement", TermKind.BINARY): "disagreement_high",
    ("Disagreement", TermKind.CONTINUOUS_Z): "disagreement_z",
    ("Inattentiveness", TermKind.BINARY): "inattentive_high",
    ("Inattentiveness", TermKind.CONTINUOUS_Z): "inattentiveness_z",
}

DEPENDENT_COLUMNS = {Dependent.LOG_APE: "ape", Dependent.LOG_MAE: "abs_error"}


@dataclass(frozen=True)
class ConditionTerm:
    name: str
    kind: TermKind = TermKind.BINARY
    interact_with_method: bool = True
    column: str | None = None

    @property
    def source_column(self) -> str:
        if self.column:
            return self.column
        try:
            return CONDITION_COLUMNS[(self.name, self.kind)]
        except KeyError:
            raise EstimationError(f"no analysis column known for condition {self.name!r}/{self.kind.value}") from None


@dataclass(frozen=True)
class ModelSpec:
    name: str = "H1"
    dependent: Dependent = Dependent.LOG_APE
    include_truth: bool = True
    method_dummy: bool = True
    condition_terms: tuple[ConditionTerm, ...] = ()
    fixed_effects: tuple[str, ...] = ()
    cluster_on: str = "year"
    baseline: str = "SIMPLE_AVG"
    challenger: str = "LLM"
    method_label: str = "Method"
    indicators: tuple[str, ...] | None = None
    horizons: tuple[int, ...] | None = None
    fe_drop_first: bool = True

    def __post_init__(self):
        object.__setattr__(self, "condition_terms", tuple(self.condition_terms))
        object.__setattr__(self, "fixed_effects", tuple(self.fixed_effects))
        if any(t.interact_with_method for t in self.condition_terms) and not self.method_dummy:
            raise ValueError("method interactions require the method dummy")


@dataclass
class Design:
    X: np.ndarray
    y: np.ndarray
    clusters: np.ndarray
    term_names: list[str]
    n_dropped: int
    data: pd.DataFrame


def build_design(records: pd.DataFrame, spec: ModelSpec) -> Design:
    """Design matrix, log-error response and cluster labels for one model.

    Columns: intercept, method dummy (1 = challenger, 0 = baseline), realized
    value, condition main effects, method x condition interactions, then
    dummy-coded fixed effects. Rows lacking any required field are dropped
    and counted.
    """
    df = records
    if df.empty:
        raise EstimationError("no records")
    if spec.method_dummy:
        df = df[df["method"].isin([spec.baseline, spec.challenger])]
    else:
        df = df[df["method"] == spec.challenger]
    if spec.indicators is not None:
        df = df[df["indicator"].isin(spec.indicators)]
    if spec.horizons is not None:
        df = df[df["horizon"].isin(spec.horizons)]
    n_selected = len(df)

    dep_col = DEPENDENT_COLUMNS[spec.dependent]
    needed = [dep_col, spec.cluster_on]
    if spec.include_truth:
        needed.append("truth")
    needed += [t.source_column for t in spec.condition_terms]
    needed += list(spec.fixed_effects)
    missing_cols = [c for c in needed if c not in df.columns]
    if missing_cols:
        raise EstimationError(f"analysis table lacks columns {missing_cols}")
    df = df.dropna(subset=needed).copy()
    n_dropped = n_selected - len(df)
    if df.empty:
        raise EstimationError(f"{spec.name}: no complete rows after dropping {n_dropped}")
    df = df.sort_values([c for c in ("indicator", "horizon", "period", "method") if c in df.columns], kind="stable")

    cols: list[np.ndarray] = [np.ones(len(df))]
    names = ["Intercept"]
    z = (df["method"] == spec.challenger).to_numpy(dtype=float)
    if spec.method_dummy:
        cols.append(z)
        names.append(spec.method_label)
    if spec.include_truth:
        cols.append(df["truth"].to_numpy(dtype=float))
        names.append("True")
    for term in spec.condition_terms:
        cols.append(df[term.source_column].to_numpy(dtype=float))
        names.append(term.name)
    for term in spec.condition_terms:
        if term.interact_with_method:
            cols.append(z * df[term.source_column].to_numpy(dtype=float))
            names.append(f"{spec.method_label}*{term.name}")
    for factor in spec.fixed_effects:
        levels = sorted(df[factor].astype(str).unique())
        values = df[factor].astype(str).to_numpy()
        for level in levels[1:] if spec.fe_drop_first else levels:
            cols.append((values == level).astype(float))
            names.append(f"{factor}[{level}]")

    X = np.column_stack(cols)
    check_collinearity(X, names)
    y = np.log(np.maximum(df[dep_col].to_numpy(dtype=float), LOG_FLOOR))
    clusters = df[spec.cluster_on].to_numpy()
    return Design(X, y, clusters, names, n_dropped, df)


def check_collinearity(X: np.ndarray, names: list[str], tol: float = 1e-10) -> None:
    k = X.shape[1]
    if np.linalg.matrix_rank(X, tol=None) == k:
        return
    # Greedy scan: a column is named when it adds no rank to the ones before it.
    culprits, kept = [], []
    for j in range(k):
        trial = X[:, kept + [j]]
        if np.linalg.matrix_rank(trial) == len(kept) + 1:
            kept.append(j)
        else:
            culprits.append(names[j])
    raise CollinearityError(f"collinear design columns: {', '.join(culprits)}", culprits)


def _qr(X: np.ndarray):
    n, k = X.shape
    if n <= k:
        raise EstimationError(f"need more observations than regressors (n={n}, k={k})")
    Q, R = np.linalg.qr(X, mode="reduced")
    d = np.abs(np.diag(R))
    if d.min() <= max(n, k) * np.finfo(float).eps * d.max():
        raise CollinearityError("design matrix is rank deficient")
    return Q, R


def ols_fit(X, y) -> tuple[np.ndarray, np.ndarray]:
    """Least squares via Householder QR."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    Q, R = _qr(X)
    beta = scl.solve_triangular(R, Q.T @ y)
    return beta, y - X @ beta


def xtx_inverse(X) -> np.ndarray:
    _, R = _qr(np.asarray(X, dtype=float))
    Rinv = scl.solve_triangular(R, np.eye(R.shape[0]))
    return Rinv @ Rinv.T


def cluster_robust_cov(X, residuals, clusters) -> np.ndarray:
    """CR1 sandwich: c (X'X)^-1 [sum_g X_g' u_g u_g' X_g] (X'X)^-1.

    c = G/(G-1) * (n-1)/(n-k).
    """
    X = np.asarray(X, dtype=float)
    u = np.asarray(residuals, dtype=float)
    n, k = X.shape
    labels, codes = np.unique(np.asarray(clusters), return_inverse=True)
    G = len(labels)
    if G < 2:
        raise EstimationError(f"cluster-robust covariance needs at least 2 clusters, got {G}")
    bread = xtx_inverse(X)
    scores = np.zeros((G, k))
    np.add.at(scores, codes.ravel(), X * u[:, None])
    meat = scores.T @ scores
    c = G / (G - 1) * (n - 1) / (n - k)
    V = c * bread @ meat @ bread
    return (V + V.T) / 2


def classical_cov(X, residuals) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    u = np.asarray(residuals, dtype=float)
    n, k = X.shape
    return (u @ u) / (n - k) * xtx_inverse(X)


def stars(p: float) -> str:
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.10:
        return "*"
    return ""


@dataclass(frozen=True)
class TermRow:
    term: str
    coef: float
    se: float
    t_stat: float
    p_value: float

    @property
    def stars(self) -> str:
        return stars(self.p_value)


@dataclass
class RegressionTable:
    rows: list[TermRow]
    n_obs: int
    n_clusters: int
    dof: int
    name: str = ""
    dependent: str = ""
    n_dropped: int = 0
    warnings: list[str] = field(default_factory=list)

    def __getitem__(self, term: str) -> TermRow:
        for row in self.rows:
            if row.term == term:
                return row
        raise KeyError(term)

    @property
    def terms(self) -> list[str]:
        return [r.term for r in self.rows]

    def conf_int(self, term: str, level: float = 0.95) -> tuple[float, float]:
        row = self[term]
        crit = scs.t.ppf(0.5 + level / 2, self.dof)
        return row.coef - crit * row.se, row.coef + crit * row.se

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["term", "coef", "se", "t_stat", "p_value", "stars"])
        for r in self.rows:
            w.writerow([r.term, repr(r.coef), repr(r.se), repr(r.t_stat), repr(r.p_value), r.stars])
        w.writerow(["n_obs", self.n_obs, "", "", "", ""])
        w.writerow(["n_clusters", self.n_clusters, "", "", "", ""])
        return out.getvalue()

    def to_dict(self) -> dict:
        return {
            "model": self.name,
            "dependent": self.dependent,
            "rows": [
                {"term": r.term, "coef": r.coef, "se": r.se, "t_stat": r.t_stat,
                 "p_value": r.p_value, "stars": r.stars}
                for r in self.rows
            ],
            "n_obs": self.n_obs,
            "n_clusters": self.n_clusters,
            "dof": self.dof,
            "n_dropped": self.n_dropped,
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def render(self) -> str:
        lines = [f"{self.name} [{self.dependent}]", f"{'':<28}{'Coef.':>12}{'SE':>10}{'t-stat':>9}{'P-val':>8}"]
        for r in self.rows:
            lines.append(f"{r.term:<28}{f'{r.coef:.3f}{r.stars}':>12}{r.se:>10.3f}{r.t_stat:>9.2f}{r.p_value:>8.3f}")
        lines.append(f"N = {self.n_obs}, clusters = {self.n_clusters}, dropped = {self.n_dropped}")
        return "\n".join(lines)


def summarize(beta, cov, n: int, k: int, G: int, term_names) -> RegressionTable:
    """t statistics and two-sided p-values from t(G - 1)."""
    beta = np.asarray(beta, dtype=float)
    cov = np.asarray(cov, dtype=float)
    diag = np.diag(cov)
    if np.any(diag < -1e-12 * max(1.0, float(np.abs(diag).max()))):
        raise EstimationError("covariance has negative diagonal entries")
    se = np.sqrt(np.clip(diag, 0.0, None))
    dof = G - 1
    notes = []
    rows = []
    for name, b, s in zip(term_names, beta, se):
        if s > 0:
            t = b / s
            p = float(2 * scs.t.sf(abs(t), dof))
        elif b == 0:
            t, p = 0.0, 1.0
        else:
            t, p = float(np.copysign(np.inf, b)), 0.0
            msg = f"degenerate inference for {name}: zero standard error"
            notes.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
        rows.append(TermRow(name, float(b), float(s), float(t), min(max(p, 0.0), 1.0)))
    return RegressionTable(rows, n, G, dof, warnings=notes)


def fit_model(records: pd.DataFrame, spec: ModelSpec) -> RegressionTable:
    design = build_design(records, spec)
    beta, resid = ols_fit(design.X, design.y)
    n, k = design.X.shape
    G = len(np.unique(design.clusters))
    cov = cluster_robust_cov(design.X, resid, design.clusters)
    table = summarize(beta, cov, n, k, G, design.term_names)
    table.name = spec.name
    table.dependent = spec.dependent.value
    table.n_dropped = design.n_dropped
    if design.n_dropped:
        logger.info("%s: dropped %d incomplete rows", spec.name, design.n_dropped)
    return table
