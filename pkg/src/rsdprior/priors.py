"""Normal priors ``beta ~ N(mean, cov)`` for the propensity coefficients.

Five constructors, one per elicitation method:

* ``standard``: zero mean, huge diagonal variance (effectively flat).
* ``pwp``: precision-weighted pooling of several historical quarter fits.
* ``last``: the most recent quarter's fit, mean and full covariance.
* ``lastz``: as ``last`` with the covariances zeroed.
* ``lit``: per-coefficient pooling of published estimates, with a vague
  fallback for coefficients the literature does not cover.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import (
    AsymmetricInput,
    InvalidConfig,
    NonPositiveDefinite,
    NonPositiveDefinitePrior,
    NonPositiveStdError,
    NonPositiveVariance,
    SchemaMismatch,
    SingularAfterEscalation,
    UnknownPredictor,
)
from .mle import CoefEstimate
from .model import CovariateSchema

log = logging.getLogger(__name__)

METHODS = ("standard", "pwp", "last", "lastz", "lit")
PROBIT_TO_LOGIT = 1.61
DEFAULT_RIDGE = 0.003
PD_TOL = 1e-10
SYM_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class PriorSpec:
    mean: np.ndarray
    cov: np.ndarray
    method: str
    provenance: dict = field(default_factory=dict)
    schema_hash: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidConfig(f"unknown prior method {self.method!r}")
        mean = np.asarray(self.mean, dtype=float).reshape(-1).copy()
        cov = np.asarray(self.cov, dtype=float).copy()
        if cov.shape != (mean.size, mean.size):
            raise InvalidConfig(f"prior cov shape {cov.shape} does not match mean length {mean.size}")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=SYM_TOL):
            raise AsymmetricInput("prior covariance is not symmetric")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def is_diagonal(self) -> bool:
        return bool(np.all(self.cov == np.diag(np.diag(self.cov))))

    @cached_property
    def precision(self) -> np.ndarray:
        """Inverse covariance via Cholesky; raises if the covariance is not PD."""
        try:
            L = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise NonPositiveDefinitePrior(f"{self.method} prior covariance is not positive definite") from exc
        Linv = np.linalg.inv(L)
        P = Linv.T @ Linv
        return 0.5 * (P + P.T)

    def to_json_obj(self) -> dict:
        obj = {"method": self.method, "mean": self.mean.tolist()}
        if self.is_diagonal:
            obj["diag"] = np.diag(self.cov).tolist()
        else:
            obj["cov"] = self.cov.tolist()
        obj["provenance"] = self.provenance
        if self.schema_hash is not None:
            obj["schema_hash"] = self.schema_hash
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "PriorSpec":
        if "cov" in obj:
            cov = np.asarray(obj["cov"], dtype=float)
        elif "diag" in obj:
            cov = np.diag(np.asarray(obj["diag"], dtype=float))
        else:
            raise InvalidConfig("prior JSON needs either 'cov' or 'diag'")
        return cls(
            mean=np.asarray(obj["mean"], dtype=float),
            cov=cov,
            method=obj["method"],
            provenance=dict(obj.get("provenance", {})),
            schema_hash=obj.get("schema_hash"),
        )


def is_positive_definite(A, tol: float = PD_TOL) -> bool:
    """Cholesky test, allowing ``tol`` of slack for semidefinite round-off."""
    A = np.asarray(A, dtype=float)
    try:
        np.linalg.cholesky(A + tol * np.eye(A.shape[0]))
    except np.linalg.LinAlgError:
        return False
    return True


def standard_prior(dim: int, variance: float = 1e6, schema_hash: str | None = None) -> PriorSpec:
    if dim < 1:
        raise InvalidConfig("prior dimension must be at least 1")
    if variance <= 0:
        raise InvalidConfig("variance must be positive")
    return PriorSpec(
        mean=np.zeros(dim),
        cov=variance * np.eye(dim),
        method="standard",
        provenance={"variance": float(variance)},
        schema_hash=schema_hash,
    )


def ridge_stabilize(V, lam: float) -> np.ndarray:
    """Shrink off-diagonal covariances toward zero: ``(1-lam) V + lam diag(V)``."""
    V = np.asarray(V, dtype=float)
    if V.ndim != 2 or V.shape[0] != V.shape[1]:
        raise AsymmetricInput(f"expected a square matrix, got shape {V.shape}")
    if not np.allclose(V, V.T, rtol=0.0, atol=SYM_TOL):
        raise AsymmetricInput("covariance matrix is not symmetric")
    if not 0.0 <= lam <= 1.0:
        raise InvalidConfig(f"lambda must lie in [0, 1], got {lam}")
    out = (1.0 - lam) * V
    np.fill_diagonal(out, np.diag(V))
    return out


def _chol_inverse(A):
    L = np.linalg.cholesky(A)
    Linv = np.linalg.inv(L)
    out = Linv.T @ Linv
    return 0.5 * (out + out.T)


def _common_schema(fits: Sequence[CoefEstimate]) -> str:
    hashes = {f.schema_hash for f in fits}
    if len(hashes) != 1:
        raise SchemaMismatch(f"fits come from different schemas: {sorted(hashes)}")
    dims = {f.beta.size for f in fits}
    if len(dims) != 1:
        raise SchemaMismatch("fits have different coefficient counts")
    return hashes.pop()


def pwp_prior(
    fits: Sequence[CoefEstimate],
    lam: float = DEFAULT_RIDGE,
    weights: Sequence[float] | None = None,
) -> PriorSpec:
    """Precision-weighted prior pooled over historical quarter fits.

    With ``P_q`` the inverse of the ridge-stabilized covariance of quarter
    ``q`` (scaled by its weight), the prior mean is
    ``(sum P_q)^-1 sum P_q beta_q`` and the prior covariance is the inverse
    of the weighted mean precision, ``(sum w_q) (sum P_q)^-1``. With unit
    weights this is ``Q (sum P_q)^-1``.

    When a Cholesky factorization fails, ``lam`` is raised tenfold (capped
    at 1) and the pooling retried; the value finally used is recorded in
    the provenance.
    """
    fits = list(fits)
    if not fits:
        raise InvalidConfig("pwp prior needs at least one fit")
    schema_hash = _common_schema(fits)
    Q = len(fits)
    if weights is None:
        w = np.ones(Q)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (Q,):
            raise InvalidConfig(f"expected {Q} weights, got {w.shape}")
        if np.any(w < 0) or not np.any(w > 0):
            raise InvalidConfig("weights must be non-negative with at least one positive")

    lam_used = lam
    while True:
        try:
            total = np.zeros_like(fits[0].cov)
            rhs = np.zeros_like(fits[0].beta)
            for wq, f in zip(w, fits):
                if wq == 0:
                    continue
                P = wq * _chol_inverse(ridge_stabilize(f.cov, lam_used))
                total += P
                rhs += P @ f.beta
            pooled_cov = _chol_inverse(total)
            break
        except np.linalg.LinAlgError:
            if lam_used >= 1.0:
                raise SingularAfterEscalation(
                    f"covariances still singular after escalating lambda to {lam_used}"
                ) from None
            lam_next = min(10.0 * lam_used, 1.0) if lam_used > 0 else DEFAULT_RIDGE
            log.warning("pwp: Cholesky failed at lambda=%g; retrying with %g", lam_used, lam_next)
            lam_used = lam_next

    mean = pooled_cov @ rhs
    cov = w.sum() * pooled_cov
    return PriorSpec(
        mean=mean,
        cov=0.5 * (cov + cov.T),
        method="pwp",
        provenance={
            "quarters": [f.quarter for f in fits],
            "lambda": float(lam_used),
            "lambda_requested": float(lam),
            "weights": w.tolist(),
        },
        schema_hash=schema_hash,
    )


def last_prior(fit: CoefEstimate, min_eigenvalue: float = 1e-12) -> PriorSpec:
    """Most recent quarter's fit used unchanged as the prior.

    Raises
    ------
    NonPositiveDefinite
        If the fit's covariance has an eigenvalue below ``min_eigenvalue``
        or fails a Cholesky factorization. The matrix is not repaired; use
        :func:`lastz_prior` for a robust variant.
    """
    cov = np.asarray(fit.cov)
    if not np.allclose(cov, cov.T, rtol=0.0, atol=SYM_TOL):
        raise NonPositiveDefinite("covariance is not symmetric")
    eig_min = float(np.linalg.eigvalsh(cov).min())
    if eig_min < min_eigenvalue:
        raise NonPositiveDefinite(f"covariance has minimum eigenvalue {eig_min:.3g}")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NonPositiveDefinite("covariance fails Cholesky factorization") from None
    return PriorSpec(
        mean=fit.beta,
        cov=cov,
        method="last",
        provenance={"quarters": [fit.quarter]},
        schema_hash=fit.schema_hash,
    )


def lastz_prior(fit: CoefEstimate) -> PriorSpec:
    """Independent normal priors from the most recent fit's variances."""
    var = np.diag(fit.cov).copy()
    if np.any(~(var > 0)):
        raise NonPositiveVariance("fit has a non-positive coefficient variance")
    return PriorSpec(
        mean=fit.beta,
        cov=np.diag(var),
        method="lastz",
        provenance={"quarters": [fit.quarter]},
        schema_hash=fit.schema_hash,
    )


def probit_to_logit(estimate: float, std_error: float) -> tuple[float, float]:
    """Rescale a probit coefficient and its SE to the logit scale (factor 1.61)."""
    if not std_error > 0:
        raise NonPositiveStdError(f"std_error must be positive, got {std_error}")
    return PROBIT_TO_LOGIT * estimate, PROBIT_TO_LOGIT * std_error


@dataclass(frozen=True)
class LitStudyEntry:
    study: str
    year: int
    predictor: str
    scale: str
    estimate: float
    std_error: float

    def __post_init__(self):
        if self.scale not in ("logit", "probit"):
            raise InvalidConfig(f"scale must be 'logit' or 'probit', got {self.scale!r}")
        if not self.std_error > 0:
            raise NonPositiveStdError(f"{self.study}: std_error must be positive")

    def on_logit_scale(self) -> tuple[float, float]:
        if self.scale == "probit":
            return probit_to_logit(self.estimate, self.std_error)
        return self.estimate, self.std_error


def lit_prior(
    entries: Sequence[LitStudyEntry],
    schema: CovariateSchema,
    fallback_mean: float = 0.0,
    fallback_variance: float = 10.0,
) -> PriorSpec:
    """Per-coefficient prior pooled from published estimates.

    For each coefficient with at least one matching entry the prior mean
    is the average estimate and the prior variance the average squared
    standard error, after probit entries are moved to the logit scale.
    Unmatched coefficients, including the intercept unless an entry names
    it, get ``N(fallback_mean, fallback_variance)``. Covariances are zero.
    """
    names = schema.coefficient_names
    index = {n: i for i, n in enumerate(names)}
    sums = np.zeros(len(names))
    sq = np.zeros(len(names))
    counts = np.zeros(len(names), dtype=int)
    studies: set[str] = set()
    for e in entries:
        if e.predictor not in index:
            raise UnknownPredictor(e.predictor)
        est, se = e.on_logit_scale()
        j = index[e.predictor]
        sums[j] += est
        sq[j] += se * se
        counts[j] += 1
        studies.add(e.study)
    hit = counts > 0
    mean = np.full(len(names), float(fallback_mean))
    var = np.full(len(names), float(fallback_variance))
    mean[hit] = sums[hit] / counts[hit]
    var[hit] = sq[hit] / counts[hit]
    return PriorSpec(
        mean=mean,
        cov=np.diag(var),
        method="lit",
        provenance={
            "studies": sorted(studies),
            "matched": [names[j] for j in np.flatnonzero(hit)],
            "fallback": {"mean": float(fallback_mean), "variance": float(fallback_variance)},
        },
        schema_hash=schema.fingerprint,
    )
