"""Synthetic multi-quarter call-attempt data with known coefficients.

Each case gets static covariates once, enters the field on a uniformly
drawn day, and is attempted again after geometric gaps until it completes
the screener, reaches ``max_attempts_per_case``, or the quarter ends.
Every attempt succeeds with probability ``inverse_logit(beta' x_it)``
under the same attempt-level logit that the analysis fits, where ``x_it``
mixes static covariates with paradata derived from the case's own past
attempts (any earlier contact, log of the attempt number, day of quarter
and a second-phase indicator).

All randomness for quarter ``q`` comes from ``derive_seed(seed, q)``,
drawn in a fixed order, so output is reproducible byte for byte.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import CalibrationFailed, InvalidConfig
from .mcmc import derive_seed
from .model import INTERCEPT, CallRecord, Covariate, CovariateSchema, build_design_row, inverse_logit, softplus
from .rsd import QuarterData

PREV_CONTACT = "prev_contact"
LOG_CALLS = "log_calls"
DAY_OF_QUARTER = "day_of_quarter"
PHASE2 = "phase2"


@dataclass(frozen=True)
class CategoricalSpec:
    name: str
    levels: tuple[str, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        if len(self.levels) != len(self.probs) or len(self.levels) < 2:
            raise InvalidConfig(f"categorical {self.name!r}: need >=2 levels with one prob each")
        if any(p < 0 for p in self.probs) or not math.isclose(sum(self.probs), 1.0, abs_tol=1e-9):
            raise InvalidConfig(f"categorical {self.name!r}: probabilities must sum to 1")


@dataclass(frozen=True)
class SimSchema:
    """Covariate generators.

    Static numerics are jointly normal with unit variances and correlation
    matrix ``numeric_corr`` (identity when omitted). Categoricals use their
    first level as the reference. The four paradata columns can be switched
    off individually.
    """

    numeric: tuple[str, ...] = ("x1", "x2", "x3", "x4")
    numeric_corr: tuple[tuple[float, ...], ...] | None = None
    categorical: tuple[CategoricalSpec, ...] = (
        CategoricalSpec("region", ("A", "B", "C"), (0.4, 0.35, 0.25)),
        CategoricalSpec("urban", ("no", "yes"), (0.6, 0.4)),
    )
    prior_contact: bool = True
    log_calls: bool = True
    day_of_quarter: bool = True
    phase2: bool = True
    contact_prob: float = 0.4

    @property
    def dynamic(self) -> tuple[str, ...]:
        flags = (
            (PREV_CONTACT, self.prior_contact),
            (LOG_CALLS, self.log_calls),
            (DAY_OF_QUARTER, self.day_of_quarter),
            (PHASE2, self.phase2),
        )
        return tuple(name for name, on in flags if on)

    def covariate_schema(self) -> CovariateSchema:
        entries = [Covariate(n) for n in self.numeric]
        entries += [Covariate(n) for n in self.dynamic]
        entries += [Covariate(c.name, "categorical", c.levels, c.levels[0]) for c in self.categorical]
        return CovariateSchema(tuple(entries))

    def numeric_cholesky(self) -> np.ndarray:
        k = len(self.numeric)
        if self.numeric_corr is None:
            return np.eye(k)
        R = np.asarray(self.numeric_corr, dtype=float)
        if R.shape != (k, k) or not np.allclose(R, R.T) or not np.allclose(np.diag(R), 1.0):
            raise InvalidConfig("numeric_corr must be a symmetric unit-diagonal matrix")
        try:
            return np.linalg.cholesky(R)
        except np.linalg.LinAlgError:
            raise InvalidConfig("numeric_corr is not positive definite") from None


DEFAULT_EFFECTS = {
    "x1": 0.5,
    "x2": -0.4,
    "x3": 0.25,
    "x4": 0.1,
    PREV_CONTACT: 0.8,
    LOG_CALLS: -0.5,
    DAY_OF_QUARTER: 0.004,
    PHASE2: 0.5,
    "region:B": -0.3,
    "region:C": 0.2,
    "urban:yes": -0.25,
}


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``true_beta`` is either a full coefficient vector in schema order or a
    mapping from coefficient name to value (unnamed coefficients are 0).
    When ``target_rr`` is set the intercept is recalibrated so the expected
    case-level response rate hits it. ``entry_window`` bounds the uniform
    first-attempt day.
    """

    n_quarters: int = 9
    cases_per_quarter: int = 450
    quarter_length: int = 84
    phase2_start: int = 71
    true_beta: Sequence[float] | Mapping[str, float] | None = None
    max_attempts_per_case: int = 12
    attempt_gap: float = 5.0
    entry_window: int = 21
    target_rr: float | None = 0.89
    drift: float = 0.0
    seed: int = 0
    first_quarter: int = 1
    sim_schema: SimSchema = field(default_factory=SimSchema)

    def __post_init__(self):
        if self.n_quarters < 1:
            raise InvalidConfig("n_quarters must be >= 1")
        if self.cases_per_quarter < 1:
            raise InvalidConfig("cases_per_quarter must be >= 1")
        if self.quarter_length < 1:
            raise InvalidConfig("quarter_length must be >= 1")
        if not 1 <= self.phase2_start <= self.quarter_length:
            raise InvalidConfig("phase2_start must lie in [1, quarter_length]")
        if self.max_attempts_per_case < 1:
            raise InvalidConfig("max_attempts_per_case must be >= 1")
        if not self.attempt_gap >= 1.0:
            raise InvalidConfig("attempt_gap (mean days between attempts) must be >= 1")
        if not 1 <= self.entry_window <= self.quarter_length:
            raise InvalidConfig("entry_window must lie in [1, quarter_length]")
        if self.target_rr is not None and not 0.0 < self.target_rr < 1.0:
            raise InvalidConfig("target_rr must lie in (0, 1)")
        if self.drift < 0:
            raise InvalidConfig("drift must be non-negative")
        if self.first_quarter < 0:
            raise InvalidConfig("first_quarter must be non-negative")

    @property
    def schema(self) -> CovariateSchema:
        return self.sim_schema.covariate_schema()

    def beta_vector(self) -> np.ndarray:
        names = self.schema.coefficient_names
        tb = DEFAULT_EFFECTS if self.true_beta is None else self.true_beta
        if isinstance(tb, Mapping):
            unknown = set(tb) - set(names)
            if unknown and self.true_beta is not None:
                raise InvalidConfig(f"true_beta names unknown coefficients {sorted(unknown)}")
            beta = np.array([float(tb.get(n, 0.0)) for n in names])
            if INTERCEPT not in tb:
                beta[0] = -1.5
            return beta
        beta = np.asarray(tb, dtype=float)
        if beta.shape != (len(names),):
            raise InvalidConfig(f"true_beta needs {len(names)} entries, got {beta.shape}")
        return beta


@dataclass(frozen=True)
class CaseHistory:
    """What is known about a case before its next attempt."""

    static: Mapping[str, object]
    attempt_days: tuple[int, ...] = ()
    contacts: tuple[bool, ...] = ()


def attempt_covariates(history: CaseHistory, day: int, sim_schema: SimSchema, phase2_start: int = 71) -> dict:
    """Covariate values for a new attempt on ``day``, from the history only."""
    if history.attempt_days and day <= history.attempt_days[-1]:
        raise InvalidConfig("next attempt must come after the last one")
    cov = dict(history.static)
    dyn = set(sim_schema.dynamic)
    if PREV_CONTACT in dyn:
        cov[PREV_CONTACT] = 1.0 if any(history.contacts) else 0.0
    if LOG_CALLS in dyn:
        cov[LOG_CALLS] = math.log(len(history.attempt_days) + 1)
    if DAY_OF_QUARTER in dyn:
        cov[DAY_OF_QUARTER] = float(day)
    if PHASE2 in dyn:
        cov[PHASE2] = 1.0 if day >= phase2_start else 0.0
    return cov


def true_propensity(
    history: CaseHistory,
    day: int,
    true_beta,
    sim_schema: SimSchema = SimSchema(),
    phase2_start: int = 71,
) -> float:
    cov = attempt_covariates(history, day, sim_schema, phase2_start)
    x = build_design_row(cov, sim_schema.covariate_schema())
    return float(inverse_logit(x @ np.asarray(true_beta, dtype=float)))


@dataclass(frozen=True, eq=False)
class SimResult:
    quarters: list[QuarterData]
    true_beta: dict[int, np.ndarray]
    true_propensity: dict[tuple[int, str, int, int], float]
    intercept: float
    config: SimConfig

    @property
    def schema(self) -> CovariateSchema:
        return self.config.schema

    def quarter(self, qid: int) -> QuarterData:
        for q in self.quarters:
            if q.quarter_id == qid:
                return q
        raise KeyError(qid)


@dataclass
class _Path:
    """A case's full attempt schedule assuming it never succeeds."""

    case_id: str
    days: list[int]
    rows: np.ndarray
    covs: list[dict]
    success_u: np.ndarray


def _draw_quarter_paths(cfg: SimConfig, qid: int, base_beta: np.ndarray):
    rng = np.random.default_rng(derive_seed(cfg.seed, qid))
    ss = cfg.sim_schema
    schema = cfg.schema
    beta_q = base_beta.copy()
    if cfg.drift > 0:
        beta_q[1:] += rng.normal(0.0, cfg.drift, size=beta_q.size - 1)

    L = ss.numeric_cholesky()
    k = len(ss.numeric)
    m = cfg.max_attempts_per_case
    paths = []
    for i in range(cfg.cases_per_quarter):
        z = L @ rng.standard_normal(k) if k else np.zeros(0)
        static: dict[str, object] = {name: float(v) for name, v in zip(ss.numeric, z)}
        for c in ss.categorical:
            static[c.name] = c.levels[int(rng.choice(len(c.levels), p=c.probs))]
        start = int(rng.integers(1, cfg.entry_window + 1))
        gaps = rng.geometric(1.0 / cfg.attempt_gap, size=m - 1)
        contact_u = rng.random(m)
        success_u = rng.random(m)

        days = [start]
        for g in gaps:
            nxt = days[-1] + int(g)
            if nxt > cfg.quarter_length:
                break
            days.append(nxt)
        hist = CaseHistory(static)
        covs, rows = [], []
        for t, d in enumerate(days):
            cov = attempt_covariates(hist, d, ss, cfg.phase2_start)
            covs.append(cov)
            rows.append(build_design_row(cov, schema))
            hist = CaseHistory(
                static,
                hist.attempt_days + (d,),
                hist.contacts + (bool(contact_u[t] < ss.contact_prob),),
            )
        paths.append(_Path(f"q{qid}-c{i:05d}", days, np.array(rows), covs, success_u[: len(days)]))
    return beta_q, paths


def _expected_rr(offsets, case_index, n_cases, b0):
    # P(case responds) = 1 - prod_t (1 - p_t) along its no-success path.
    log_fail = -softplus(offsets + b0)
    return float(np.mean(-np.expm1(np.bincount(case_index, weights=log_fail, minlength=n_cases))))


def calibrate_intercept(offsets, case_index, n_cases, target, tol=0.005, lo=-30.0, hi=30.0) -> float:
    """Bisection for the intercept giving expected case-level response rate ``target``."""
    f_lo = _expected_rr(offsets, case_index, n_cases, lo)
    f_hi = _expected_rr(offsets, case_index, n_cases, hi)
    if not f_lo <= target <= f_hi:
        raise CalibrationFailed(f"target {target} outside attainable range [{f_lo:.4f}, {f_hi:.4f}]")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _expected_rr(offsets, case_index, n_cases, mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    b0 = 0.5 * (lo + hi)
    if abs(_expected_rr(offsets, case_index, n_cases, b0) - target) > tol:
        raise CalibrationFailed(f"could not reach target {target} within {tol}")
    return b0


def simulate_quarters(cfg: SimConfig) -> SimResult:
    """Generate ``cfg.n_quarters`` quarters plus their ground truth.

    Raises
    ------
    CalibrationFailed
        If ``cfg.target_rr`` cannot be reached by moving the intercept.
    """
    schema = cfg.schema
    base = cfg.beta_vector()
    qids = list(range(cfg.first_quarter, cfg.first_quarter + cfg.n_quarters))
    drawn = {q: _draw_quarter_paths(cfg, q, base) for q in qids}

    intercept = float(base[0])
    if cfg.target_rr is not None:
        offsets, case_index = [], []
        n_cases = 0
        for q in qids:
            beta_q, paths = drawn[q]
            for p in paths:
                offsets.append(p.rows[:, 1:] @ beta_q[1:])
                case_index.append(np.full(len(p.days), n_cases))
                n_cases += 1
        intercept = calibrate_intercept(
            np.concatenate(offsets), np.concatenate(case_index), n_cases, cfg.target_rr
        )

    quarters, truth_beta, truth_p = [], {}, {}
    for q in qids:
        beta_q, paths = drawn[q]
        beta_q = beta_q.copy()
        beta_q[0] = intercept
        truth_beta[q] = beta_q
        records = []
        for p in paths:
            probs = np.atleast_1d(inverse_logit(p.rows @ beta_q))
            hits = np.flatnonzero(p.success_u < probs)
            stop = int(hits[0]) if hits.size else len(p.days) - 1
            for t in range(stop + 1):
                outcome = int(hits.size > 0 and t == stop)
                rec = CallRecord(q, p.case_id, p.days[t], t + 1, outcome, p.covs[t])
                records.append(rec)
                truth_p[rec.key] = float(probs[t])
        quarters.append(QuarterData(q, tuple(records), schema, cfg.quarter_length))
    return SimResult(quarters, truth_beta, truth_p, intercept, cfg)
