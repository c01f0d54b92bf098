"""Maximum likelihood fitting of the attempt-level logit and its fit statistics."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateData, DimensionMismatch, TooFewGroups
from .model import Dataset, inverse_logit, log_likelihood, softplus

log = logging.getLogger(__name__)

# Coefficients this large on the logit scale signal (quasi-)separation.
SEPARATION_BOUND = 15.0


@dataclass(frozen=True, eq=False)
class CoefEstimate:
    """Fitted coefficients with their inverse-observed-information covariance."""

    schema_hash: str
    beta: np.ndarray
    cov: np.ndarray
    n_rows: int
    converged: bool
    loglik: float
    quarter: int | None = None
    ridge: float = 0.0

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).reshape(-1).copy()
        cov = np.asarray(self.cov, dtype=float).copy()
        if cov.shape != (beta.size, beta.size):
            raise DimensionMismatch(f"cov shape {cov.shape} does not match beta length {beta.size}")
        beta.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "cov", cov)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def with_quarter(self, quarter: int | None) -> "CoefEstimate":
        return CoefEstimate(
            self.schema_hash, self.beta, self.cov, self.n_rows,
            self.converged, self.loglik, quarter, self.ridge,
        )

    def to_json_obj(self) -> dict:
        obj = {
            "schema_hash": self.schema_hash,
            "beta": self.beta.tolist(),
            "cov": self.cov.tolist(),
            "n_rows": int(self.n_rows),
            "converged": bool(self.converged),
            "loglik": float(self.loglik),
        }
        if self.quarter is not None:
            obj["quarter"] = int(self.quarter)
        if self.ridge:
            obj["ridge"] = float(self.ridge)
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "CoefEstimate":
        return cls(
            schema_hash=obj["schema_hash"],
            beta=np.asarray(obj["beta"], dtype=float),
            cov=np.asarray(obj["cov"], dtype=float),
            n_rows=int(obj["n_rows"]),
            converged=bool(obj["converged"]),
            loglik=float(obj["loglik"]),
            quarter=obj.get("quarter"),
            ridge=float(obj.get("ridge", 0.0)),
        )


@dataclass(frozen=True)
class FitStats:
    nagelkerke_r2: float
    auc: float
    hl_stat: float
    hl_pvalue: float
    hl_groups: int


def _newton(X, y, beta0, tol, max_iter, ridge=0.0):
    """Damped Newton ascent on ``loglik - ridge * ||beta||^2``.

    Returns ``(beta, negH, converged, singular)`` where ``negH`` is the
    penalized observed information at the returned point.
    """
    C = X.shape[1]
    beta = beta0.copy()

    def objective(b):
        eta = X @ b
        return y @ eta - softplus(eta).sum() - ridge * (b @ b)

    obj = objective(beta)
    for _ in range(max_iter):
        p = inverse_logit(X @ beta)
        score = X.T @ (y - p) - 2.0 * ridge * beta
        negH = (X.T * (p * (1.0 - p))) @ X + 2.0 * ridge * np.eye(C)
        if np.max(np.abs(score)) < tol:
            return beta, negH, True, False
        try:
            step = np.linalg.solve(negH, score)
        except np.linalg.LinAlgError:
            return beta, negH, False, True
        if not np.all(np.isfinite(step)):
            return beta, negH, False, True
        t = 1.0
        while True:
            cand = beta + t * step
            new = objective(cand)
            if new >= obj - 1e-12 * abs(obj) or t < 1e-10:
                break
            t *= 0.5
        beta, obj = cand, new
        if np.max(np.abs(beta)) > 1e6:
            break
    p = inverse_logit(X @ beta)
    score = X.T @ (y - p) - 2.0 * ridge * beta
    negH = (X.T * (p * (1.0 - p))) @ X + 2.0 * ridge * np.eye(C)
    return beta, negH, bool(np.max(np.abs(score)) < tol), False


def _invert_information(negH):
    try:
        L = np.linalg.cholesky(negH)
    except np.linalg.LinAlgError:
        return None
    Linv = np.linalg.inv(L)
    cov = Linv.T @ Linv
    return 0.5 * (cov + cov.T)


def fit_mle(
    data: Dataset,
    tol: float = 1e-8,
    max_iter: int = 100,
    ridge_on_separation: float = 1e-4,
    quarter: int | None = None,
) -> CoefEstimate:
    """Fit the logit by Newton-Raphson (equivalently IRLS).

    If the unpenalized fit diverges, produces a coefficient beyond
    ``SEPARATION_BOUND`` or hits a singular information matrix, the model
    is refit with the penalty ``ridge_on_separation * ||beta||^2`` and the
    returned estimate has ``converged=False``.

    Raises
    ------
    DegenerateData
        If only one outcome class is present or there are fewer rows than
        coefficients.
    """
    X, y = data.X, data.y
    n, C = X.shape
    if n < C:
        raise DegenerateData(f"{n} rows cannot identify {C} coefficients")
    s = y.sum()
    if s == 0 or s == n:
        raise DegenerateData("outcome has a single class")

    beta, negH, ok, singular = _newton(X, y, np.zeros(C), tol, max_iter)
    cov = None
    if ok and not singular and np.max(np.abs(beta)) <= SEPARATION_BOUND:
        cov = _invert_information(negH)
        if cov is not None and np.linalg.cond(negH) > 1e14:
            cov = None
    ridge = 0.0
    if cov is None:
        log.warning("MLE did not converge cleanly (n=%d); refitting with ridge %g", n, ridge_on_separation)
        ridge = ridge_on_separation
        beta, negH, _, _ = _newton(X, y, np.zeros(C), tol, max_iter, ridge=ridge)
        cov = _invert_information(negH)
        if cov is None:
            cov = np.linalg.pinv(negH)
        ok = False
    return CoefEstimate(
        schema_hash=data.schema.fingerprint,
        beta=beta,
        cov=cov,
        n_rows=n,
        converged=ok,
        loglik=log_likelihood(beta, data),
        quarter=quarter,
        ridge=ridge,
    )


def null_loglik(y) -> float:
    """Intercept-only log-likelihood, available in closed form."""
    y = np.asarray(y, dtype=float)
    n, s = y.size, y.sum()
    if n == 0 or s == 0 or s == n:
        raise DegenerateData("intercept-only likelihood needs both outcome classes")
    pbar = s / n
    return float(s * math.log(pbar) + (n - s) * math.log1p(-pbar))


def nagelkerke_r2(est: CoefEstimate, data: Dataset) -> float:
    """Cox-Snell R^2 rescaled by its maximum attainable value."""
    if est.beta.size != data.coefficient_count:
        raise DimensionMismatch("estimate and data disagree on coefficient count")
    n = data.n_rows
    L0 = null_loglik(data.y)
    L1 = log_likelihood(est.beta, data)
    cox_snell = -math.expm1(2.0 * (L0 - L1) / n)
    max_cs = -math.expm1(2.0 * L0 / n)
    return float(min(max(cox_snell / max_cs, 0.0), 1.0))


def auc(pred, y) -> float:
    """Area under the ROC curve as the Mann-Whitney concordance probability.

    Ties between a positive and a negative count one half.
    """
    from scipy.stats import rankdata

    pred = np.asarray(pred, dtype=float).reshape(-1)
    y = np.asarray(y).reshape(-1)
    if pred.shape != y.shape:
        raise DimensionMismatch("pred and y differ in length")
    pos = y == 1
    n1, n0 = int(pos.sum()), int((~pos).sum())
    if n1 == 0 or n0 == 0:
        raise DegenerateData("AUC needs at least one positive and one negative")
    ranks = rankdata(pred)
    u = ranks[pos].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


# --- chi-square upper tail via the regularized incomplete gamma function ---

def _gamma_series(a, x):
    # P(a, x) by its power series; converges fast for x < a + 1.
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-16:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_contfrac(a, x):
    # Q(a, x) by modified Lentz continued fraction; for x >= a + 1.
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammaincc(a: float, x: float) -> float:
    """Regularized upper incomplete gamma ``Q(a, x)``."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _gamma_series(a, x))
    return min(1.0, _gamma_contfrac(a, x))


def chi2_sf(stat: float, df: int) -> float:
    """Upper tail of the chi-square distribution.

    ``df == 0`` is the point mass at zero.
    """
    if df < 0:
        raise ValueError("degrees of freedom must be non-negative")
    if stat <= 0:
        return 1.0
    if df == 0:
        return 0.0
    return gammaincc(df / 2.0, stat / 2.0)


def hosmer_lemeshow(pred, y, groups: int = 10) -> tuple[float, float]:
    """Hosmer-Lemeshow goodness-of-fit statistic over deciles of risk.

    Rows are stably sorted by predicted probability (ties keep row order)
    and split into ``groups`` near-equal groups. The statistic sums
    ``(O - E)^2 / (E (1 - E/n_g))`` over groups, referred to chi-square with
    ``groups - 2`` degrees of freedom.
    """
    pred = np.asarray(pred, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if groups < 2:
        raise TooFewGroups(f"groups={groups}; need at least 2")
    if pred.shape != y.shape:
        raise DimensionMismatch("pred and y differ in length")
    n = pred.size
    if n < 2 * groups:
        raise DegenerateData(f"{n} rows is too few for {groups} groups")
    order = np.argsort(pred, kind="stable")
    stat = 0.0
    for idx in np.array_split(order, groups):
        ng = idx.size
        O = y[idx].sum()
        E = pred[idx].sum()
        denom = E * (1.0 - E / ng)
        if denom <= 0:
            if O != E:
                raise DegenerateData("group with zero expected variance but O != E")
            continue
        stat += (O - E) ** 2 / denom
    return float(stat), float(chi2_sf(stat, groups - 2))


def fit_stats(est: CoefEstimate, data: Dataset, groups: int = 10) -> FitStats:
    pred = inverse_logit(data.X @ est.beta)
    stat, pval = hosmer_lemeshow(pred, data.y, groups)
    return FitStats(
        nagelkerke_r2=nagelkerke_r2(est, data),
        auc=auc(pred, data.y),
        hl_stat=stat,
        hl_pvalue=pval,
        hl_groups=groups,
    )
