"""Call-attempt data model and the discrete-time logistic likelihood.

Each contact attempt is one row of a stacked person-period data set. The
per-attempt probability of completing the screener is modelled as

    logit P(Y_it = 1) = beta' x_it,

with ``x_it[0] == 1`` for the intercept. The log-likelihood and its
derivatives here are the building blocks for maximum likelihood fitting
(:mod:`rsdprior.mle`) and posterior sampling (:mod:`rsdprior.mcmc`).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidConfig, MissingCovariate, UnknownLevel

INTERCEPT = "(Intercept)"
NUMERIC = "numeric"
CATEGORICAL = "categorical"

# 1 - 2**-53: the largest double strictly below one.
_ONE_MINUS = float(np.nextafter(1.0, 0.0))
_TINY = float(np.finfo(float).tiny)


@dataclass(frozen=True)
class Covariate:
    """One schema entry: a numeric column or a categorical with a reference level."""

    name: str
    kind: str = NUMERIC
    levels: tuple[str, ...] = ()
    reference: str | None = None

    def __post_init__(self):
        if not self.name:
            raise InvalidConfig("covariate name must be non-empty")
        if self.kind == NUMERIC:
            if self.levels or self.reference is not None:
                raise InvalidConfig(f"numeric covariate {self.name!r} cannot declare levels")
        elif self.kind == CATEGORICAL:
            levels = tuple(str(lv) for lv in self.levels)
            object.__setattr__(self, "levels", levels)
            if len(levels) < 2:
                raise InvalidConfig(f"categorical {self.name!r} needs at least two levels")
            if len(set(levels)) != len(levels):
                raise InvalidConfig(f"categorical {self.name!r} has duplicate levels")
            ref = levels[0] if self.reference is None else str(self.reference)
            if ref not in levels:
                raise InvalidConfig(f"reference {ref!r} is not a level of {self.name!r}")
            object.__setattr__(self, "reference", ref)
        else:
            raise InvalidConfig(f"unknown covariate kind {self.kind!r}")

    @property
    def dummy_levels(self) -> tuple[str, ...]:
        """Non-reference levels, each of which gets one indicator column."""
        return tuple(lv for lv in self.levels if lv != self.reference)

    def to_dict(self) -> dict:
        if self.kind == NUMERIC:
            return {"name": self.name, "kind": NUMERIC}
        return {
            "name": self.name,
            "kind": CATEGORICAL,
            "levels": list(self.levels),
            "reference": self.reference,
        }


@dataclass(frozen=True)
class CovariateSchema:
    """Ordered covariate declarations and the coefficient layout they imply.

    The layout is: intercept first, then one coefficient per numeric entry,
    then one per non-reference level of each categorical entry, each group
    in declaration order. Categorical coefficients are named ``"name:level"``.
    """

    entries: tuple[Covariate, ...]

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        names = [e.name for e in entries]
        if len(set(names)) != len(names):
            raise InvalidConfig("covariate names must be unique")
        coefs = self.coefficient_names
        if len(set(coefs)) != len(coefs):
            raise InvalidConfig("schema implies duplicate coefficient names")

    @classmethod
    def numeric(cls, names: Iterable[str]) -> "CovariateSchema":
        return cls(tuple(Covariate(n) for n in names))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.entries)

    @cached_property
    def numeric_entries(self) -> tuple[Covariate, ...]:
        return tuple(e for e in self.entries if e.kind == NUMERIC)

    @cached_property
    def categorical_entries(self) -> tuple[Covariate, ...]:
        return tuple(e for e in self.entries if e.kind == CATEGORICAL)

    @cached_property
    def coefficient_names(self) -> tuple[str, ...]:
        out = [INTERCEPT]
        out.extend(e.name for e in self.numeric_entries)
        for e in self.categorical_entries:
            out.extend(f"{e.name}:{lv}" for lv in e.dummy_levels)
        return tuple(out)

    @property
    def coefficient_count(self) -> int:
        return len(self.coefficient_names)

    def coefficient_index(self, name: str) -> int:
        return self.coefficient_names.index(name)

    def to_json_obj(self) -> list[dict]:
        return [e.to_dict() for e in self.entries]

    @classmethod
    def from_json_obj(cls, obj: Sequence[Mapping]) -> "CovariateSchema":
        if not isinstance(obj, (list, tuple)):
            raise InvalidConfig("schema JSON must be an array of covariate entries")
        entries = []
        for item in obj:
            unknown = set(item) - {"name", "kind", "levels", "reference"}
            if unknown:
                raise InvalidConfig(f"unknown schema keys {sorted(unknown)}")
            entries.append(
                Covariate(
                    name=item["name"],
                    kind=item.get("kind", NUMERIC),
                    levels=tuple(item.get("levels", ())),
                    reference=item.get("reference"),
                )
            )
        return cls(tuple(entries))

    @cached_property
    def fingerprint(self) -> str:
        """Stable short hash of the canonical JSON form."""
        canon = json.dumps(self.to_json_obj(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class CallRecord:
    """A single contact attempt for one sampled case."""

    quarter_id: int
    case_id: str
    day: int
    attempt: int
    outcome: int
    covariates: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.outcome not in (0, 1):
            raise InvalidConfig(f"outcome must be 0 or 1, got {self.outcome!r}")
        if self.day < 1:
            raise InvalidConfig(f"day must be >= 1, got {self.day}")
        if self.attempt < 1:
            raise InvalidConfig(f"attempt must be >= 1, got {self.attempt}")

    @property
    def key(self) -> tuple[int, str, int, int]:
        return (self.quarter_id, self.case_id, self.day, self.attempt)


def check_case_histories(records: Iterable[CallRecord], quarter_length: int | None = None) -> None:
    """Validate per-case ordering and the at-most-one-success rule.

    Raises
    ------
    InvalidConfig
        If a case's attempts are not strictly increasing in ``(day, attempt)``,
        a record follows a success, or a day falls outside the quarter.
    """
    by_case: dict[tuple[int, str], list[CallRecord]] = {}
    for r in records:
        if quarter_length is not None and not 1 <= r.day <= quarter_length:
            raise InvalidConfig(f"case {r.case_id}: day {r.day} outside [1, {quarter_length}]")
        by_case.setdefault((r.quarter_id, r.case_id), []).append(r)
    for (q, case), recs in by_case.items():
        recs = sorted(recs, key=lambda r: r.attempt)
        for prev, cur in zip(recs, recs[1:]):
            if cur.attempt == prev.attempt or cur.day < prev.day:
                raise InvalidConfig(f"case {case} (quarter {q}): attempts out of order")
            if prev.outcome == 1:
                raise InvalidConfig(f"case {case} (quarter {q}): attempt after a success")


def build_design_row(record: CallRecord | Mapping[str, object], schema: CovariateSchema) -> np.ndarray:
    """Encode one record's covariates as a design row with a leading 1.

    Categoricals use reference-cell coding: the reference level maps to all
    zeros in its block, any other level to a single indicator.
    """
    cov = record.covariates if isinstance(record, CallRecord) else record
    row = np.zeros(schema.coefficient_count)
    row[0] = 1.0
    pos = 1
    for e in schema.numeric_entries:
        if e.name not in cov:
            raise MissingCovariate(e.name)
        row[pos] = float(cov[e.name])
        pos += 1
    for e in schema.categorical_entries:
        if e.name not in cov:
            raise MissingCovariate(e.name)
        value = str(cov[e.name])
        if value not in e.levels:
            raise UnknownLevel(e.name, value)
        dummies = e.dummy_levels
        if value != e.reference:
            row[pos + dummies.index(value)] = 1.0
        pos += len(dummies)
    return row


@dataclass(frozen=True, eq=False)
class Dataset:
    """Design matrix, outcomes and the record keys they came from.

    ``X`` has one row per attempt with ``X[:, 0] == 1``. ``day``, ``case_id``,
    ``attempt`` and ``quarter`` are parallel arrays kept for provenance and
    for subsetting by day.
    """

    schema: CovariateSchema
    X: np.ndarray
    y: np.ndarray
    day: np.ndarray | None = None
    case_id: np.ndarray | None = None
    attempt: np.ndarray | None = None
    quarter: np.ndarray | None = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float, ndmin=2, copy=True)
        if X.size == 0:
            X = X.reshape(0, self.schema.coefficient_count)
        y = np.asarray(self.y, dtype=float).reshape(-1).copy()
        if X.shape[1] != self.schema.coefficient_count:
            raise DimensionMismatch(
                f"design rows have {X.shape[1]} columns, schema implies {self.schema.coefficient_count}"
            )
        if X.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"{X.shape[0]} design rows but {y.shape[0]} outcomes")
        if X.shape[0] and not np.all(X[:, 0] == 1.0):
            raise InvalidConfig("first design column must be the intercept (all ones)")
        if not np.all((y == 0) | (y == 1)):
            raise InvalidConfig("outcomes must be binary")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        for name in ("day", "case_id", "attempt", "quarter"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr).copy()
                if arr.shape != (X.shape[0],):
                    raise DimensionMismatch(f"{name} has shape {arr.shape}, expected ({X.shape[0]},)")
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    @classmethod
    def from_records(cls, records: Sequence[CallRecord], schema: CovariateSchema) -> "Dataset":
        C = schema.coefficient_count
        X = np.empty((len(records), C))
        for i, r in enumerate(records):
            X[i] = build_design_row(r, schema)
        return cls(
            schema=schema,
            X=X,
            y=np.array([r.outcome for r in records], dtype=float),
            day=np.array([r.day for r in records], dtype=int),
            case_id=np.array([r.case_id for r in records], dtype=object),
            attempt=np.array([r.attempt for r in records], dtype=int),
            quarter=np.array([r.quarter_id for r in records], dtype=int),
        )

    @classmethod
    def from_arrays(cls, X, y, schema: CovariateSchema | None = None) -> "Dataset":
        """Wrap raw arrays; without a schema, columns after the intercept become x1, x2, ..."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if schema is None:
            schema = CovariateSchema.numeric(f"x{j}" for j in range(1, X.shape[1]))
        return cls(schema=schema, X=X, y=y)

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def coefficient_count(self) -> int:
        return self.X.shape[1]

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        pick = lambda a: None if a is None else a[mask]  # noqa: E731
        return Dataset(
            schema=self.schema,
            X=self.X[mask],
            y=self.y[mask],
            day=pick(self.day),
            case_id=pick(self.case_id),
            attempt=pick(self.attempt),
            quarter=pick(self.quarter),
        )


def inverse_logit(eta):
    """Overflow-safe logistic function, kept strictly inside (0, 1).

    Works on scalars and arrays; returns a float for scalar input.
    """
    eta = np.asarray(eta, dtype=float)
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ez = np.exp(eta[~pos])
    out[~pos] = ez / (1.0 + ez)
    out = np.clip(out, _TINY, _ONE_MINUS)
    return float(out) if out.ndim == 0 else out


def softplus(eta):
    """``log(1 + exp(eta))`` without overflow."""
    eta = np.asarray(eta, dtype=float)
    return np.maximum(eta, 0.0) + np.log1p(np.exp(-np.abs(eta)))


def _check_beta(beta, data: Dataset) -> np.ndarray:
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.shape[0] != data.coefficient_count:
        raise DimensionMismatch(
            f"beta has length {beta.shape[0]}, data has {data.coefficient_count} coefficients"
        )
    return beta


def log_likelihood(beta, data: Dataset) -> float:
    """Bernoulli-logit log-likelihood, sum of ``y*eta - log(1 + exp(eta))``."""
    beta = _check_beta(beta, data)
    eta = data.X @ beta
    return float(data.y @ eta - softplus(eta).sum())


def log_likelihood_gradient(beta, data: Dataset) -> np.ndarray:
    beta = _check_beta(beta, data)
    p = inverse_logit(data.X @ beta)
    return data.X.T @ (data.y - p)


def log_likelihood_hessian(beta, data: Dataset) -> np.ndarray:
    beta = _check_beta(beta, data)
    p = inverse_logit(data.X @ beta)
    w = p * (1.0 - p)
    H = -(data.X.T * w) @ data.X
    return 0.5 * (H + H.T)
