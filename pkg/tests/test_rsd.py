import math

import numpy as np
import pytest
from scipy.stats import spearmanr

from rsdprior.errors import EmptyInput, InvalidConfig, NoAttemptsThatDay
from rsdprior.mcmc import McmcConfig
from rsdprior.mle import fit_mle
from rsdprior.model import CallRecord, CovariateSchema, inverse_logit
from rsdprior.priors import PriorSpec, lastz_prior, standard_prior
from rsdprior.rsd import (
    DailyEvalRow,
    QuarterData,
    benchmark_predictions,
    daily_bias,
    daily_predictions,
    parse_windows,
    rmse,
    run_quarter,
    validate_windows,
    window_summary,
)
from rsdprior.simulate import SimConfig, simulate_quarters

FAST = McmcConfig(tune_loops=10, tune_len=50, burn_in=100, draws=300, seed=3)


# --- bias, se, rmse ---

def test_daily_bias_examples():
    b, se = daily_bias([0.1, -0.1])
    assert b == 0.0 and se == pytest.approx(0.1, abs=1e-15)
    assert daily_bias([0.0, 0.0, 0.0]) == (0.0, 0.0)
    assert daily_bias([0.2]) == (0.2, None)
    with pytest.raises(EmptyInput):
        daily_bias([])


def test_rmse_examples():
    assert rmse(0.03, 0.04) == pytest.approx(0.05, abs=1e-15)
    assert rmse(-0.2, 0.0) == 0.2
    assert rmse(0.0, 0.3) == 0.3


def test_rmse_at_least_abs_bias():
    rng = np.random.default_rng(0)
    for _ in range(200):
        diffs = rng.uniform(-1, 1, size=int(rng.integers(2, 30)))
        b, se = daily_bias(diffs)
        r = rmse(b, se)
        assert r >= abs(b)
        assert abs(r * r - (b * b + se * se)) <= 1e-12


# --- windows ---

def rows(spec):
    return [DailyEvalRow(d, 3, b, s, None if s is None else math.hypot(b, s)) for d, b, s in spec]


def test_window_summary_by_hand():
    rs = rows([(7, 0.1, 0.1), (8, -0.2, 0.0), (9, 0.3, None), (31, 0.05, 0.12), (32, 0.0, 0.0), (40, -0.1, 0.2)])
    out = window_summary(rs, ((7, 30), (31, 60)))
    w1, w2 = out
    assert w1["days"] == 3 and w1["mean_bias"] == pytest.approx(0.2 / 3, abs=1e-15)
    assert w1["median_bias"] == pytest.approx(0.1)
    assert w1["mean_abs_bias"] == pytest.approx(0.2, abs=1e-15)
    assert w1["rmse_days"] == 2 and w1["mean_rmse"] == pytest.approx((math.hypot(0.1, 0.1) + 0.2) / 2)
    assert w2["mean_bias"] == pytest.approx(-0.05 / 3, abs=1e-15)
    assert w2["mean_rmse"] == pytest.approx((0.13 + 0.0 + math.hypot(0.1, 0.2)) / 3, abs=1e-15)


def test_window_boundaries_inclusive():
    rs = rows([(d, 0.0, 0.0) for d in range(7, 85)])
    out = window_summary(rs, ((7, 30),))
    assert out[0]["days"] == 24 and out[0]["mean_bias"] == 0.0
    for w in window_summary(rs):
        assert w["mean_bias"] == 0.0


def test_window_excludes_skipped():
    rs = rows([(7, 0.1, 0.0)]) + [DailyEvalRow(8, 0, skipped=True)]
    assert window_summary(rs, ((7, 8),))[0]["days"] == 1
    with pytest.raises(EmptyInput):
        window_summary([])


def test_parse_and_validate_windows():
    w = parse_windows("7-30,31-60,61-84")
    assert w == ((7, 30), (31, 60), (61, 84))
    validate_windows(w, 84)
    for bad in ("7-30,20-40", "0-5", "30-7", "1-90"):
        with pytest.raises(InvalidConfig):
            validate_windows(parse_windows(bad), 84)
    with pytest.raises(InvalidConfig):
        parse_windows("7_30")


# --- benchmark ---

def test_benchmark_is_final_attempt_fit(small_sim):
    q = small_sim.quarters[0]
    bench = benchmark_predictions(q)
    est = fit_mle(q.dataset)
    data = q.dataset
    assert len(bench) == len(set(data.case_id))
    p_all = inverse_logit(data.X @ est.beta)
    assert abs(p_all.mean() - data.y.mean()) < 1e-8
    i = int(np.flatnonzero(data.case_id == data.case_id[0]).max())
    case = data.case_id[i]
    last = max(np.flatnonzero(data.case_id == case), key=lambda j: data.attempt[j])
    assert bench[case] == pytest.approx(float(inverse_logit(data.X[last] @ est.beta)), abs=1e-15)


def test_benchmark_half_when_balanced():
    recs = [CallRecord(1, f"c{i}", 1 + i % 5, 1, i % 2, {}) for i in range(20)]
    q = QuarterData(1, tuple(recs), CovariateSchema(()))
    assert all(abs(p - 0.5) < 1e-12 for p in benchmark_predictions(q).values())


def test_benchmark_tracks_truth():
    res = simulate_quarters(SimConfig(n_quarters=1, cases_per_quarter=1200, seed=21))
    q = res.quarters[0]
    assert q.n_attempts >= 5000
    bench = benchmark_predictions(q)
    final = {}
    for r in q.records:
        if r.case_id not in final or r.attempt > final[r.case_id].attempt:
            final[r.case_id] = r
    truth = [res.true_propensity[final[c].key] for c in bench]
    assert spearmanr(list(bench.values()), truth).statistic > 0.8


# --- daily predictions and run_quarter ---

def test_tight_prior_predictions(small_sim):
    q = small_sim.quarters[0]
    gamma = np.linspace(-1, 0.5, q.schema.coefficient_count)
    prior = PriorSpec(gamma, 1e-10 * np.eye(gamma.size), "lastz", schema_hash=q.schema.fingerprint)
    preds = daily_predictions(q, prior, 20, FAST)
    data = q.dataset
    for (case, att), p in preds.items():
        i = np.flatnonzero((data.case_id == case) & (data.attempt == att))[0]
        assert abs(p - float(inverse_logit(data.X[i] @ gamma))) < 1e-3


def test_no_attempts_that_day():
    recs = [CallRecord(1, "a", 3, 1, 0, {}), CallRecord(1, "b", 3, 1, 1, {})]
    q = QuarterData(1, tuple(recs), CovariateSchema(()), quarter_length=10)
    with pytest.raises(NoAttemptsThatDay):
        daily_predictions(q, standard_prior(1), 4, FAST)


def test_run_quarter_coverage_and_identities(small_sim):
    q = small_sim.quarters[1]
    prior = standard_prior(q.schema.coefficient_count)
    out = run_quarter(q, prior, FAST, start_day=7)
    assert [r.day for r in out] == list(range(7, 85))
    present = set(int(d) for d in q.dataset.day)
    for r in out:
        assert r.skipped == (r.day not in present)
        if not r.skipped:
            assert r.n == int(np.sum(q.dataset.day == r.day)) and r.n >= 1
            assert -1 <= r.bias <= 1
            if r.rmse is not None:
                assert r.rmse >= abs(r.bias)
                assert abs(r.rmse**2 - (r.bias**2 + r.se**2)) <= 1e-12


def test_run_quarter_deterministic_and_parallel(small_sim):
    q = small_sim.quarters[2]
    prior = standard_prior(q.schema.coefficient_count)
    a = run_quarter(q, prior, FAST, start_day=70, master_seed=5)
    b = run_quarter(q, prior, FAST, start_day=70, master_seed=5)
    c = run_quarter(q, prior, FAST, start_day=70, master_seed=5, jobs=2)
    assert a == b == c
    d = run_quarter(q, prior, FAST, start_day=70, master_seed=6)
    assert a != d


def test_exclude_current_day_changes_fit(small_sim):
    q = small_sim.quarters[0]
    prior = standard_prior(q.schema.coefficient_count)
    a = daily_predictions(q, prior, 30, FAST)
    b = daily_predictions(q, prior, 30, FAST, exclude_current_day=True)
    assert a.keys() == b.keys() and a != b


def test_run_quarter_rejects_bad_start(small_sim):
    q = small_sim.quarters[0]
    with pytest.raises(InvalidConfig):
        run_quarter(q, standard_prior(q.schema.coefficient_count), FAST, start_day=0)
    with pytest.raises(InvalidConfig):
        run_quarter(q, standard_prior(3), FAST)


def test_late_predictions_closer_than_day_seven():
    wins = 0
    for seed in range(20):
        res = simulate_quarters(SimConfig(n_quarters=1, seed=300 + seed))
        q = res.quarters[0]
        bench = benchmark_predictions(q)
        prior = standard_prior(q.schema.coefficient_count)
        last_day = int(q.dataset.day.max())
        err = []
        for d in (7, last_day):
            preds = daily_predictions(q, prior, d, FAST.with_seed(seed))
            err.append(np.mean([abs(p - bench[c]) for (c, _), p in preds.items()]))
        wins += err[1] < err[0]
    assert wins > 10
