import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

import oracles
from spf_combine.data import ForecastPanel, Indicator, SurveyPeriod, TruthSeries, align
from spf_combine.errors import DegenerateStandardization, InsufficientCrossSection, UndefinedMetric
from spf_combine.metrics import (
    AboveMedian,
    AboveThreshold,
    ape,
    binarize,
    condition_flags,
    disagreement,
    inattentiveness,
    log_floor,
    mae,
    metrics_csv,
    period_metrics,
    zscore,
)

P = SurveyPeriod.parse
values = st.floats(-20, 20, allow_nan=False, allow_infinity=False)
vectors = st.lists(values, min_size=2, max_size=40)


def test_disagreement_examples():
    assert disagreement([5, 5, 5]) == 0.0
    assert disagreement([1, 2, 3]) == 1.0
    assert disagreement([1.2, 1.8]) == pytest.approx(0.42426406871192857, abs=1e-12)
    with pytest.raises(InsufficientCrossSection):
        disagreement([1.0])


def test_inattentiveness_examples():
    cur = {"A": 2.0, "B": 1.5, "C": 3.0}
    prev = {"A": 2.0, "B": 1.4, "C": 3.0}
    assert inattentiveness(cur, prev) == pytest.approx(2 / 3)
    assert inattentiveness(prev, prev) == 1.0
    assert inattentiveness({"A": 1.0, "B": 2.0}, {"A": 1.5, "B": 2.5}) == 0.0
    with pytest.raises(UndefinedMetric):
        inattentiveness({"A": 1.0}, {"B": 1.0})


def test_inattentiveness_ignores_forecasters_in_one_round_only():
    assert inattentiveness({"A": 1.0, "B": 2.0}, {"A": 1.0, "C": 7.0}) == 1.0


def test_ape_examples():
    assert ape(2.4, 3.0) == pytest.approx(0.2)
    assert ape(1.7, 1.7) == 0.0
    assert ape(-1.0, -2.0) == pytest.approx(0.5)
    with pytest.raises(UndefinedMetric):
        ape(1.0, 0.0)


def test_mae_examples():
    assert mae([1, 2], [1, 3]) == 0.5
    assert mae([1.5, 2.5], [1.5, 2.5]) == 0.0
    assert mae([2.4], [3.1]) == pytest.approx(0.7)


def test_zscore_examples():
    assert zscore([1, 2, 3]) == [-1.0, 0.0, 1.0]
    with pytest.raises(DegenerateStandardization):
        zscore([4.0, 4.0, 4.0])
    z = zscore([0.3, 1.7, 2.2, 9.0])
    assert np.allclose(zscore(z), z, atol=1e-9)


def test_binarize_examples():
    assert binarize({"a": 1, "b": 2, "c": 3}, AboveMedian()) == {"a": False, "b": False, "c": True}
    assert binarize({"a": 0.05, "b": 0.30}, AboveThreshold(0.1)) == {"a": False, "b": True}
    assert binarize({"a": 2.0, "b": 2.0, "c": 2.0}, AboveMedian()) == {"a": False, "b": False, "c": False}
    # exactly at the threshold is not above it
    assert binarize({"a": 0.1}, AboveThreshold(0.1)) == {"a": False}


def test_log_floor():
    assert log_floor(0.0) == math.log(1e-6)
    assert log_floor(math.e) == pytest.approx(1.0)


@settings(max_examples=300, deadline=None)
@given(vectors, values)
def test_disagreement_translation_invariant(f, c):
    a = disagreement(f)
    b = disagreement([x + c for x in f])
    assert b == pytest.approx(a, abs=1e-10, rel=1e-9)


@settings(max_examples=300, deadline=None)
@given(vectors, st.floats(-10, 10, allow_nan=False))
def test_disagreement_scale_equivariant(f, c):
    assert disagreement([c * x for x in f]) == pytest.approx(abs(c) * disagreement(f), abs=1e-10, rel=1e-9)


@settings(max_examples=300, deadline=None)
@given(vectors)
def test_disagreement_matches_two_pass_oracle(f):
    assert disagreement(f) == pytest.approx(oracles.sample_sd(f), abs=1e-10)


pairs = st.dictionaries(st.sampled_from("ABCDEFGH"), st.tuples(values, values, st.booleans()), min_size=1)


def _rounds(spec):
    cur = {k: a for k, (a, _, _) in spec.items()}
    prev = {k: (a if rep else b) for k, (a, b, rep) in spec.items()}
    return cur, prev


@settings(max_examples=300, deadline=None)
@given(pairs)
def test_inattentiveness_bounded_and_matches_oracle(spec):
    cur, prev = _rounds(spec)
    lam = inattentiveness(cur, prev)
    assert 0.0 <= lam <= 1.0
    assert lam == pytest.approx(oracles.repeat_share(cur, prev), abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(pairs, values)
def test_adding_a_repeater_never_lowers_inattentiveness(spec, v):
    cur, prev = _rounds(spec)
    before = inattentiveness(cur, prev)
    cur["NEW"], prev["NEW"] = v, v
    assert inattentiveness(cur, prev) >= before


@settings(max_examples=300, deadline=None)
@given(values, values)
def test_ape_nonnegative_zero_iff_exact(f, x):
    assume(abs(x) > 1e-6)
    a = ape(f, x)
    assert a >= 0
    assert (a == 0) == (f == x)
    assert a == pytest.approx(oracles.ape(f, x), abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(values, values)
def test_mae_single_pair_is_ape_times_truth(f, x):
    assume(abs(x) > 1e-6)
    assert mae([f], [x]) == pytest.approx(ape(f, x) * abs(x), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(values, min_size=2, max_size=30))
def test_zscore_standardized(xs):
    assume(np.std(xs, ddof=1) > 1e-3)
    z = np.array(zscore(xs))
    assert abs(z.mean()) < 1e-9
    assert abs(np.std(z, ddof=1) - 1) < 1e-9


def _small_dataset():
    ps = [P("2001Q1"), P("2001Q2"), P("2001Q3"), P("2002Q1")]
    cells = {
        (ps[0], "A"): 2.0, (ps[0], "B"): 1.4, (ps[0], "C"): 3.0,
        (ps[1], "A"): 2.0, (ps[1], "B"): 1.5, (ps[1], "C"): 3.0,
        (ps[2], "A"): 2.1,
        (ps[3], "A"): 2.1, (ps[3], "B"): 2.0,
    }
    panel = ForecastPanel(Indicator.GDP_GROWTH, 1, ps, ["A", "B", "C"], cells)
    truth = TruthSeries(Indicator.GDP_GROWTH, {p: 1.0 + i for i, p in enumerate(ps)})
    return align(panel, truth)


def test_period_metrics_rules():
    m = {x.period: x for x in period_metrics(_small_dataset())}
    assert m[P("2001Q1")].inattentiveness is None  # nothing before it
    assert m[P("2001Q2")].inattentiveness == pytest.approx(2 / 3)
    assert m[P("2001Q3")].disagreement is None  # single respondent
    assert m[P("2001Q3")].inattentiveness == 0.0
    # 2001Q4 was not surveyed, so 2002Q1 has no previous round
    assert m[P("2002Q1")].inattentiveness is None
    assert m[P("2002Q1")].n_experts == 2


def test_condition_flags_and_csv():
    ds = _small_dataset()
    metrics = period_metrics(ds)
    flags = condition_flags(metrics, 0.1)
    assert flags[P("2001Q2")].inattentive_high is True
    assert flags[P("2001Q3")].inattentive_high is False
    assert flags[P("2001Q1")].inattentive_high is None
    text = metrics_csv([(ds.indicator, ds.horizon, m, flags[m.period]) for m in metrics])
    assert text.splitlines()[0].startswith("period,indicator,horizon")
    assert len(text.splitlines()) == 5
