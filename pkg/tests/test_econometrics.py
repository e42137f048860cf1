import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from spf_combine.econometrics import (
    ConditionTerm,
    Dependent,
    ModelSpec,
    TermKind,
    build_design,
    classical_cov,
    cluster_robust_cov,
    fit_model,
    ols_fit,
    stars,
    summarize,
)
from spf_combine.errors import CollinearityError, EstimationError
from spf_combine.synth import planted_effect_records


def random_system(rng, n=None, k=None, G=None):
    k = k or int(rng.integers(1, 7))
    n = n or int(rng.integers(k + 2, 41))
    X = np.column_stack([np.ones(n)] + [rng.normal(size=n) for _ in range(k - 1)])
    y = X @ rng.normal(size=k) + rng.normal(size=n)
    G = G or int(rng.integers(2, min(n, 10) + 1))
    clusters = rng.integers(0, G, size=n)
    clusters[:G] = np.arange(G)  # every label used at least once
    return X, y, clusters


def test_exact_line():
    beta, resid = ols_fit([[1, 0], [1, 1], [1, 2]], [1, 2, 3])
    assert np.allclose(beta, [1, 1], atol=1e-12)
    assert np.allclose(resid, 0, atol=1e-12)


def test_y_orthogonal_to_columns_gives_zero_beta():
    X = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], float)
    y = np.array([1, -1, -1, 1], float)
    beta, _ = ols_fit(X, y)
    assert np.allclose(beta, 0, atol=1e-12)


def test_ols_matches_pinv_oracle_on_random_systems():
    rng = np.random.default_rng(1)
    for _ in range(50):
        X, y, _ = random_system(rng)
        beta, resid = ols_fit(X, y)
        assert np.max(np.abs(beta - oracles.ols_pinv(X, y))) < 1e-8
        assert np.max(np.abs(X.T @ resid)) < 1e-8


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10**6), c=st.floats(-100, 100))
def test_constant_shift_moves_only_intercept(seed, c):
    X, y, _ = random_system(np.random.default_rng(seed))
    b0, _ = ols_fit(X, y)
    b1, _ = ols_fit(X, y + c)
    assert b1[0] == pytest.approx(b0[0] + c, abs=1e-9)
    assert np.allclose(b1[1:], b0[1:], atol=1e-9)


def test_rank_deficient_design_raises():
    X = np.column_stack([np.ones(5), np.arange(5), 2 * np.arange(5)])
    with pytest.raises(CollinearityError):
        ols_fit(X, np.arange(5.0))
    with pytest.raises(EstimationError):
        ols_fit(np.ones((2, 2)), [1, 2])


def test_cr1_matches_bruteforce_oracle():
    rng = np.random.default_rng(2)
    for _ in range(50):
        X, y, cl = random_system(rng)
        _, u = ols_fit(X, y)
        V = cluster_robust_cov(X, u, cl)
        assert np.max(np.abs(V - oracles.cr1_bruteforce(X, u, cl))) < 1e-8


def test_cr1_thirty_obs_five_clusters():
    rng = np.random.default_rng(30)
    X, y, cl = random_system(rng, n=30, k=4, G=5)
    _, u = ols_fit(X, y)
    assert np.allclose(cluster_robust_cov(X, u, cl), oracles.cr1_bruteforce(X, u, cl), atol=1e-8, rtol=0)


def test_singleton_clusters_equal_scaled_hc_sandwich():
    rng = np.random.default_rng(3)
    for _ in range(20):
        X, y, _ = random_system(rng)
        _, u = ols_fit(X, y)
        V = cluster_robust_cov(X, u, np.arange(len(y)))
        assert np.max(np.abs(V - oracles.hc1_scaled(X, u))) < 1e-8


def test_zero_residuals_zero_covariance():
    X, _, cl = random_system(np.random.default_rng(4))
    assert np.all(cluster_robust_cov(X, np.zeros(len(X)), cl) == 0)


def test_single_cluster_rejected():
    X, y, _ = random_system(np.random.default_rng(5))
    with pytest.raises(EstimationError):
        cluster_robust_cov(X, y, np.zeros(len(y)))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_cr1_invariant_to_relabeling_and_within_cluster_permutation(seed):
    rng = np.random.default_rng(seed)
    X, y, cl = random_system(rng)
    _, u = ols_fit(X, y)
    V = cluster_robust_cov(X, u, cl)
    names = np.array([f"g{int(rng.integers(1e9))}_{c}" for c in range(cl.max() + 1)])
    assert np.allclose(cluster_robust_cov(X, u, names[cl]), V, atol=1e-12, rtol=1e-10)
    perm = np.argsort(cl + rng.uniform(0, 0.5, len(cl)), kind="stable")
    assert np.allclose(cluster_robust_cov(X[perm], u[perm], cl[perm]), V, atol=1e-12, rtol=1e-10)


def test_cr1_agrees_with_classical_for_homoskedastic_singletons():
    rng = np.random.default_rng(6)
    n = 2000
    X = np.column_stack([np.ones(n), rng.normal(size=n), rng.normal(size=n)])
    y = X @ [1.0, 0.5, -0.3] + rng.normal(size=n)
    _, u = ols_fit(X, y)
    ratio = np.sqrt(np.diag(cluster_robust_cov(X, u, np.arange(n))) / np.diag(classical_cov(X, u)))
    assert np.all((0.9 <= ratio) & (ratio <= 1.1))


def test_p_value_examples():
    t = summarize([2.06], [[1.0]], n=100, k=1, G=25, term_names=["x"])
    assert t["x"].p_value == pytest.approx(0.05, abs=0.005)
    assert t["x"].p_value == pytest.approx(oracles.t_two_sided_p(2.06, 24), abs=1e-8)
    assert t.dof == 24
    zero = summarize([0.0, 0.0], np.eye(2), n=10, k=2, G=5, term_names=["a", "b"])
    assert [r.p_value for r in zero.rows] == [1.0, 1.0]


def test_p_value_decreases_with_abs_t():
    rng = np.random.default_rng(7)
    ts = np.sort(np.abs(rng.normal(0, 5, 200)))
    t = summarize(ts, np.eye(len(ts)), n=500, k=len(ts), G=20, term_names=[str(i) for i in range(len(ts))])
    ps = [r.p_value for r in t.rows]
    assert all(a >= b for a, b in zip(ps, ps[1:]))
    huge = summarize([1e6], [[1.0]], n=50, k=1, G=20, term_names=["x"])
    assert huge["x"].p_value < 1e-12


def test_zero_se_nonzero_coef_reports_p_zero_with_warning():
    with pytest.warns(RuntimeWarning, match="degenerate"):
        t = summarize([1.5, 0.0], np.zeros((2, 2)), n=10, k=2, G=5, term_names=["x", "y"])
    assert t["x"].p_value == 0.0 and t["x"].t_stat == np.inf
    assert t["y"].p_value == 1.0
    assert t.warnings


def test_stars_thresholds():
    assert [stars(p) for p in (0.2, 0.09, 0.04, 0.009)] == ["", "*", "**", "***"]


def records(seed=0, **kw):
    df = planted_effect_records(np.random.default_rng(seed), challenger="Qwen", **kw)
    rng = np.random.default_rng(seed + 1)
    df["disagreement_high"] = rng.integers(0, 2, len(df)).astype(float)
    df["disagreement_z"] = rng.normal(size=len(df))
    df["inattentive_high"] = rng.integers(0, 2, len(df)).astype(float)
    df["inattentiveness_z"] = rng.normal(size=len(df))
    return df


def test_h1_design_has_three_columns():
    d = build_design(records(), ModelSpec(challenger="Qwen", method_label="Qwen"))
    assert d.term_names == ["Intercept", "Qwen", "True"]
    assert d.X.shape[1] == 3


def test_h3_design_adds_condition_and_interaction():
    spec = ModelSpec(challenger="Qwen", method_label="Qwen", condition_terms=(ConditionTerm("Disagreement"),))
    d = build_design(records(), spec)
    assert d.term_names == ["Intercept", "Qwen", "True", "Disagreement", "Qwen*Disagreement"]
    assert np.array_equal(d.X[:, 4], d.X[:, 1] * d.X[:, 3])


def test_continuous_condition_uses_z_column():
    df = records()
    spec = ModelSpec(challenger="Qwen", condition_terms=(ConditionTerm("Inattentiveness", TermKind.CONTINUOUS_Z),))
    d = build_design(df, spec)
    assert np.allclose(np.sort(d.X[:, 3]), np.sort(df["inattentiveness_z"].to_numpy()))


def test_full_dummy_fixed_effects_collinear_with_intercept():
    df = pd.DataFrame({
        "method": ["SIMPLE_AVG", "LLM", "SIMPLE_AVG", "LLM"], "truth": [1.0, 1.0, 2.0, 2.5],
        "ape": [0.1, 0.2, 0.3, 0.1], "year": [2000, 2000, 2001, 2001], "cohort": ["a", "b", "c", "d"],
        "indicator": "GDP", "horizon": 1, "period": ["2000Q1", "2000Q1", "2001Q1", "2001Q1"],
    })
    spec = ModelSpec(fixed_effects=("cohort",), fe_drop_first=False)
    with pytest.raises(CollinearityError) as info:
        build_design(df, spec)
    assert info.value.columns


def test_fixed_effect_dummies_drop_base_level():
    df = records()
    df["quarter"] = df["period"].str[-1]
    spec = ModelSpec(challenger="Qwen", fixed_effects=("quarter",))
    t = fit_model(df, spec)
    assert t.terms[-3:] == ["quarter[2]", "quarter[3]", "quarter[4]"]
    assert len(t.rows) == 3 + 4 - 1


def test_incomplete_rows_dropped_and_counted():
    df = records()
    df.loc[df.index[:5], "ape"] = np.nan
    t = fit_model(df, ModelSpec(challenger="Qwen"))
    assert t.n_dropped == 5
    assert t.n_obs == len(df) - 5


def test_log_mae_uses_absolute_error_column():
    df = records()
    a = fit_model(df, ModelSpec(challenger="Qwen", dependent=Dependent.LOG_APE))
    b = fit_model(df, ModelSpec(challenger="Qwen", dependent=Dependent.LOG_MAE))
    # same pairs of rows, so the method effect matches; the levels do not
    assert b["Method"].coef == pytest.approx(a["Method"].coef, abs=1e-9)
    assert b["True"].coef != pytest.approx(a["True"].coef, abs=1e-3)
    assert b.dependent == "LOG_MAE"


def test_table_serialization():
    t = fit_model(records(), ModelSpec(name="H1", challenger="Qwen", method_label="Qwen"))
    lines = t.to_csv().splitlines()
    assert lines[0] == "term,coef,se,t_stat,p_value,stars"
    assert [ln.split(",")[0] for ln in lines[1:4]] == ["Intercept", "Qwen", "True"]
    assert lines[-2].startswith("n_obs,") and lines[-1].startswith("n_clusters,25")
    assert t.to_dict()["n_clusters"] == 25
    lo, hi = t.conf_int("Qwen")
    assert lo < t["Qwen"].coef < hi
    assert "Qwen" in t.render()


def test_planted_effect_within_three_clustered_se():
    rng = np.random.default_rng(99)
    hits = 0
    spec = ModelSpec()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        for _ in range(200):
            t = fit_model(planted_effect_records(rng), spec)
            hits += abs(t["Method"].coef + 0.12) <= 3 * t["Method"].se
    assert hits / 200 >= 0.95
