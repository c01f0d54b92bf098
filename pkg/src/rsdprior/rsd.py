"""Daily prediction and evaluation loop for one data-collection quarter.

For a completed quarter, the end-of-quarter MLE gives each case a
benchmark probability at its final attempt. Starting on ``start_day``,
each day's cumulative data is refit by MCMC under a chosen prior, every
attempt made that day gets a posterior-mean probability, and the
differences from the benchmarks are summarized as a daily bias, its
standard error and an RMSE.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import EmptyInput, InvalidConfig, NoAttemptsThatDay
from .mcmc import McmcConfig, derive_seed, posterior_mean_prediction, sample_posterior
from .mle import fit_mle
from .model import CallRecord, CovariateSchema, Dataset, inverse_logit
from .priors import PriorSpec

log = logging.getLogger(__name__)

DEFAULT_WINDOWS = ((7, 30), (31, 60), (61, 84))


@dataclass(frozen=True, eq=False)
class QuarterData:
    quarter_id: int
    records: tuple[CallRecord, ...]
    schema: CovariateSchema
    quarter_length: int = 84

    def __post_init__(self):
        recs = tuple(sorted(self.records, key=lambda r: (r.day, r.case_id, r.attempt)))
        for r in recs:
            if r.quarter_id != self.quarter_id:
                raise InvalidConfig(f"record {r.key} belongs to quarter {r.quarter_id}, not {self.quarter_id}")
            if not 1 <= r.day <= self.quarter_length:
                raise InvalidConfig(f"record {r.key} has day outside [1, {self.quarter_length}]")
        object.__setattr__(self, "records", recs)

    @cached_property
    def dataset(self) -> Dataset:
        return Dataset.from_records(self.records, self.schema)

    @property
    def n_attempts(self) -> int:
        return len(self.records)

    def case_response_rate(self) -> float:
        cases = {r.case_id for r in self.records}
        done = {r.case_id for r in self.records if r.outcome == 1}
        return len(done) / len(cases) if cases else float("nan")


@dataclass(frozen=True)
class DailyEvalRow:
    day: int
    n: int
    bias: float | None = None
    se: float | None = None
    rmse: float | None = None
    skipped: bool = False
    diagnostics: dict | None = field(default=None, compare=False, repr=False)


def benchmark_predictions(q: QuarterData) -> dict[str, float]:
    """Each case's fitted probability at its final attempt, from the full-quarter MLE."""
    data = q.dataset
    est = fit_mle(data, quarter=q.quarter_id)
    if not est.converged:
        log.warning("quarter %s: benchmark fit needed the separation penalty", q.quarter_id)
    last_row: dict[str, int] = {}
    for i, (case, att) in enumerate(zip(data.case_id, data.attempt)):
        j = last_row.get(case)
        if j is None or att > data.attempt[j]:
            last_row[case] = i
    idx = np.fromiter(last_row.values(), dtype=int, count=len(last_row))
    probs = inverse_logit(data.X[idx] @ est.beta)
    return {case: float(p) for case, p in zip(last_row.keys(), np.atleast_1d(probs))}


def daily_predictions(
    q: QuarterData,
    prior: PriorSpec,
    d: int,
    cfg: McmcConfig,
    exclude_current_day: bool = False,
) -> dict[tuple[str, int], float]:
    """Posterior-mean probabilities for every attempt made on day ``d``.

    The posterior conditions on all attempts with ``day <= d`` (or
    ``day < d`` when ``exclude_current_day``). ``cfg.seed`` is used as is;
    :func:`run_quarter` derives a per-day seed before calling this.
    """
    data = q.dataset
    today = data.day == d
    if not today.any():
        raise NoAttemptsThatDay(d)
    preds, _ = _predict_day(data, prior, d, cfg, exclude_current_day)
    return preds


def _predict_day(data, prior, d, cfg, exclude_current_day):
    today = data.day == d
    fit_mask = data.day < d if exclude_current_day else data.day <= d
    draws = sample_posterior(data.subset(fit_mask), prior, cfg)
    probs = np.atleast_1d(posterior_mean_prediction(draws, data.X[today]))
    keys = zip(data.case_id[today], data.attempt[today])
    preds = {(str(c), int(a)): float(p) for (c, a), p in zip(keys, probs)}
    return preds, draws


def daily_bias(diffs: Sequence[float]) -> tuple[float, float | None]:
    """Mean difference and its standard error (sample sd over sqrt n).

    The standard error is ``None`` for a single difference.
    """
    diffs = np.asarray(diffs, dtype=float).reshape(-1)
    n = diffs.size
    if n == 0:
        raise EmptyInput("no differences to summarize")
    bias = float(diffs.mean())
    if n == 1:
        return bias, None
    return bias, float(diffs.std(ddof=1) / math.sqrt(n))


def rmse(bias: float, se: float) -> float:
    if se < 0:
        raise ValueError("se must be non-negative")
    return math.hypot(bias, se)


def _evaluate_day(args):
    q, prior, d, cfg, bench, exclude_current_day = args
    preds, draws = _predict_day(q.dataset, prior, d, cfg, exclude_current_day)
    diffs = [p - bench[case] for (case, _), p in preds.items()]
    bias, se = daily_bias(diffs)
    diag = draws.diagnostics()
    diag["seed"] = cfg.seed
    diag["min_diff"] = min(diffs)
    diag["max_diff"] = max(diffs)
    return DailyEvalRow(
        day=d,
        n=len(diffs),
        bias=bias,
        se=se,
        rmse=None if se is None else rmse(bias, se),
        diagnostics=diag,
    )


def run_quarter(
    q: QuarterData,
    prior: PriorSpec,
    cfg: McmcConfig,
    start_day: int = 7,
    master_seed: int | None = None,
    exclude_current_day: bool = False,
    jobs: int = 1,
    benchmark: dict[str, float] | None = None,
) -> list[DailyEvalRow]:
    """Evaluate daily predictions on every day from ``start_day`` to the quarter's end.

    Each day's sampler seed is ``derive_seed(master_seed, quarter_id, day)``
    (``master_seed`` defaults to ``cfg.seed``), so days are independent and
    ``jobs > 1`` reproduces the serial result exactly. Days without attempts
    yield a row with ``skipped=True``.
    """
    if not 1 <= start_day <= q.quarter_length:
        raise InvalidConfig(f"start_day {start_day} outside [1, {q.quarter_length}]")
    if prior.dim != q.schema.coefficient_count:
        raise InvalidConfig("prior dimension does not match the quarter's schema")
    prior.precision  # fail fast on a non-PD prior
    master = cfg.seed if master_seed is None else master_seed
    bench = benchmark_predictions(q) if benchmark is None else benchmark
    days_with_data = set(int(d) for d in np.unique(q.dataset.day))

    tasks = []
    for d in range(start_day, q.quarter_length + 1):
        if d in days_with_data:
            day_cfg = cfg.with_seed(derive_seed(master, q.quarter_id, d))
            tasks.append((q, prior, d, day_cfg, bench, exclude_current_day))

    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            evaluated = list(pool.map(_evaluate_day, tasks))
    else:
        evaluated = [_evaluate_day(t) for t in tasks]

    by_day = {row.day: row for row in evaluated}
    return [
        by_day.get(d, DailyEvalRow(day=d, n=0, skipped=True))
        for d in range(start_day, q.quarter_length + 1)
    ]


def _stats(values) -> dict:
    if not values:
        return {"mean": None, "median": None, "iqr": None}
    v = np.asarray(values, dtype=float)
    q25, q50, q75 = np.percentile(v, [25, 50, 75])
    return {"mean": float(v.mean()), "median": float(q50), "iqr": float(q75 - q25)}


def parse_windows(text: str) -> tuple[tuple[int, int], ...]:
    """Parse ``"7-30,31-60,61-84"`` into inclusive day windows."""
    out = []
    for part in text.split(","):
        lo, _, hi = part.strip().partition("-")
        try:
            out.append((int(lo), int(hi)))
        except ValueError:
            raise InvalidConfig(f"bad window {part!r}; expected START-END") from None
    return tuple(out)


def validate_windows(windows, quarter_length: int) -> None:
    prev_hi = 0
    for lo, hi in windows:
        if not 1 <= lo <= hi <= quarter_length:
            raise InvalidConfig(f"window {lo}-{hi} outside [1, {quarter_length}]")
        if lo <= prev_hi:
            raise InvalidConfig("windows must be ordered and disjoint")
        prev_hi = hi


def window_summary(rows: Sequence[DailyEvalRow], windows=DEFAULT_WINDOWS) -> list[dict]:
    """Mean, median and IQR of daily bias and RMSE inside each inclusive day window.

    Skipped days are left out of the bias statistics; days without an
    RMSE (a single attempt) are left out of the RMSE statistics.
    """
    rows = list(rows)
    if not rows:
        raise EmptyInput("no evaluation rows to summarize")
    out = []
    for lo, hi in windows:
        inside = [r for r in rows if lo <= r.day <= hi and not r.skipped]
        biases = [r.bias for r in inside]
        rmses = [r.rmse for r in inside if r.rmse is not None]
        b, e = _stats(biases), _stats(rmses)
        out.append(
            {
                "window": f"{lo}-{hi}",
                "days": len(inside),
                "mean_bias": b["mean"],
                "median_bias": b["median"],
                "iqr_bias": b["iqr"],
                "mean_abs_bias": float(np.mean(np.abs(biases))) if biases else None,
                "rmse_days": len(rmses),
                "mean_rmse": e["mean"],
                "median_rmse": e["median"],
                "iqr_rmse": e["iqr"],
            }
        )
    return out
