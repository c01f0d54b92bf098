"""Flat-file interchange formats.

Every file written here carries ``format_version``, the schema fingerprint
and the master seed. JSON files hold them as top-level keys; CSV files
start with one comment line of ``key=value`` pairs, e.g.::

    # format_version=1 schema_hash=3f2a... seed=7

Readers skip leading ``#`` lines when parsing the table and expose the
pairs through :func:`read_csv_meta`.
"""
from __future__ import annotations

import csv
import json
import math
import os
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidConfig, MissingCovariate, ParseError, SchemaFingerprintMismatch
from .mle import CoefEstimate, FitStats
from .model import CATEGORICAL, CallRecord, CovariateSchema
from .priors import LitStudyEntry, PriorSpec
from .rsd import DailyEvalRow, QuarterData

FORMAT_VERSION = 1
CALL_COLUMNS = ("quarter", "case_id", "day", "attempt", "outcome")
EVAL_COLUMNS = ("day", "n", "bias", "se", "rmse", "skipped")
PLOT_COLUMNS = ("method", "quarter", "day", "bias", "se", "rmse")
LIT_COLUMNS = ("study", "year", "predictor", "scale", "estimate", "std_error")


def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _meta_line(meta: dict) -> str:
    items = {"format_version": FORMAT_VERSION, **meta}
    parts = []
    for k, v in items.items():
        if v is None:
            continue
        sv = str(v)
        if any(c.isspace() for c in sv) or "=" in sv:
            raise InvalidConfig(f"metadata value for {k!r} must not contain spaces or '='")
        parts.append(f"{k}={sv}")
    return "# " + " ".join(parts) + "\n"


def read_csv_meta(path) -> dict:
    meta = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            for tok in line[1:].split():
                k, sep, v = tok.partition("=")
                if sep:
                    meta[k] = v
    return meta


def _data_lines(fh):
    """Yield ``(line_number, text)`` for non-comment lines."""
    for i, line in enumerate(fh, start=1):
        if line.startswith("#"):
            continue
        yield i, line


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, allow_nan=False)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc.msg}", line=exc.lineno, column=exc.colno) from None


def check_fingerprints(*pairs: tuple[str, str | None]) -> str:
    """All non-null fingerprints must agree; returns the common value."""
    seen = {(h, src) for src, h in pairs if h}
    hashes = {h for h, _ in seen}
    if len(hashes) > 1:
        detail = ", ".join(f"{src}={h}" for h, src in sorted(seen))
        raise SchemaFingerprintMismatch(f"schema fingerprints disagree: {detail}")
    return hashes.pop() if hashes else ""


# --- schema ---

def write_schema(path, schema: CovariateSchema, seed: int | None = None) -> None:
    write_json(
        path,
        {
            "format_version": FORMAT_VERSION,
            "schema_hash": schema.fingerprint,
            "seed": seed,
            "covariates": schema.to_json_obj(),
        },
    )


def read_schema(path) -> CovariateSchema:
    """Read a schema file: either a bare array of entries or the wrapped form."""
    obj = read_json(path)
    entries = obj["covariates"] if isinstance(obj, dict) else obj
    schema = CovariateSchema.from_json_obj(entries)
    if isinstance(obj, dict) and obj.get("schema_hash") not in (None, schema.fingerprint):
        raise SchemaFingerprintMismatch(f"{path}: stored fingerprint does not match its entries")
    return schema


# --- call records ---

def write_calls_csv(path, quarters: Iterable[QuarterData], schema: CovariateSchema, seed=None) -> None:
    quarters = list(quarters)
    qlen = quarters[0].quarter_length if quarters else None
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(_meta_line({"schema_hash": schema.fingerprint, "seed": seed, "quarter_length": qlen}))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CALL_COLUMNS + schema.names)
        kinds = {e.name: e.kind for e in schema.entries}
        for q in quarters:
            for r in sorted(q.records, key=lambda r: (r.case_id, r.attempt)):
                row = [r.quarter_id, r.case_id, r.day, r.attempt, r.outcome]
                for name in schema.names:
                    v = r.covariates[name]
                    row.append(str(v) if kinds[name] == CATEGORICAL else _num(v))
                w.writerow(row)


def read_calls_csv(path, schema: CovariateSchema, ignore_extra: bool = False) -> list[CallRecord]:
    """Parse a call-record CSV against ``schema``.

    Raises
    ------
    ParseError
        On a malformed header, an unknown column (unless ``ignore_extra``),
        or a value that does not parse; carries the line and column.
    MissingCovariate
        If a schema covariate has no column.
    SchemaFingerprintMismatch
        If the file's recorded fingerprint differs from ``schema``'s.
    """
    meta = read_csv_meta(path)
    check_fingerprints((str(path), meta.get("schema_hash")), ("schema", schema.fingerprint))
    kinds = {e.name: e for e in schema.entries}
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        lines = _data_lines(fh)
        try:
            header_no, header_line = next(lines)
        except StopIteration:
            raise ParseError(f"{path}: empty file", line=1) from None
        header = next(csv.reader([header_line]))
        if tuple(header[:5]) != CALL_COLUMNS:
            raise ParseError(f"{path}: header must start with {','.join(CALL_COLUMNS)}", line=header_no)
        extra = [h for h in header[5:] if h not in kinds]
        if extra and not ignore_extra:
            raise ParseError(f"{path}: unknown column {extra[0]!r}", line=header_no, column=extra[0])
        for name in schema.names:
            if name not in header:
                raise MissingCovariate(name)
        if len(set(header)) != len(header):
            raise ParseError(f"{path}: duplicate column names", line=header_no)
        for line_no, text in lines:
            if not text.strip():
                continue
            fields = next(csv.reader([text]))
            if len(fields) != len(header):
                raise ParseError(f"{path}: expected {len(header)} fields, got {len(fields)}", line=line_no)
            row = dict(zip(header, fields))
            col = None
            try:
                col = "quarter"
                quarter = int(row["quarter"])
                col = "day"
                day = int(row["day"])
                col = "attempt"
                attempt = int(row["attempt"])
                col = "outcome"
                outcome = int(row["outcome"])
                if outcome not in (0, 1):
                    raise ValueError
                covs = {}
                for name, e in kinds.items():
                    col = name
                    if e.kind == CATEGORICAL:
                        if row[name] not in e.levels:
                            raise ValueError
                        covs[name] = row[name]
                    else:
                        v = float(row[name])
                        if not math.isfinite(v):
                            raise ValueError
                        covs[name] = v
                col = None
                rec = CallRecord(quarter, row["case_id"], day, attempt, outcome, covs)
            except (ValueError, InvalidConfig):
                raise ParseError(f"{path}: bad value {row.get(col)!r}", line=line_no, column=col) from None
            records.append(rec)
    return records


def quarters_from_records(records: Sequence[CallRecord], schema: CovariateSchema, quarter_length=84) -> dict[int, QuarterData]:
    by_q: dict[int, list[CallRecord]] = {}
    for r in records:
        by_q.setdefault(r.quarter_id, []).append(r)
    return {q: QuarterData(q, tuple(rs), schema, quarter_length) for q, rs in sorted(by_q.items())}


# --- fits and priors ---

def write_fit(path, est: CoefEstimate, stats: FitStats | None = None, seed=None, coefficient_names=None) -> None:
    obj = {"format_version": FORMAT_VERSION, **est.to_json_obj(), "seed": seed}
    if coefficient_names is not None:
        obj["coefficient_names"] = list(coefficient_names)
    if stats is not None:
        obj["fit_stats"] = {
            "nagelkerke_r2": stats.nagelkerke_r2,
            "auc": stats.auc,
            "hl_stat": stats.hl_stat,
            "hl_pvalue": stats.hl_pvalue,
            "hl_groups": stats.hl_groups,
        }
    write_json(path, obj)


def read_fit(path) -> CoefEstimate:
    obj = read_json(path)
    try:
        return CoefEstimate.from_json_obj(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: not a coefficient estimate ({exc})") from None


def write_prior(path, prior: PriorSpec, seed=None) -> None:
    write_json(path, {"format_version": FORMAT_VERSION, **prior.to_json_obj(), "seed": seed})


def read_prior(path) -> PriorSpec:
    obj = read_json(path)
    try:
        return PriorSpec.from_json_obj(obj)
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}: not a prior ({exc})") from None


def read_lit_crosswalk(path) -> list[LitStudyEntry]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        lines = _data_lines(fh)
        try:
            header_no, header_line = next(lines)
        except StopIteration:
            raise ParseError(f"{path}: empty file", line=1) from None
        header = next(csv.reader([header_line]))
        if tuple(header) != LIT_COLUMNS:
            raise ParseError(f"{path}: header must be {','.join(LIT_COLUMNS)}", line=header_no)
        for line_no, text in lines:
            if not text.strip():
                continue
            fields = next(csv.reader([text]))
            if len(fields) != len(LIT_COLUMNS):
                raise ParseError(f"{path}: expected {len(LIT_COLUMNS)} fields", line=line_no)
            row = dict(zip(LIT_COLUMNS, fields))
            col = None
            try:
                col = "year"
                year = int(row["year"])
                col = "estimate"
                est = float(row["estimate"])
                col = "std_error"
                se = float(row["std_error"])
                col = "scale"
                out.append(LitStudyEntry(row["study"], year, row["predictor"], row["scale"], est, se))
            except (ValueError, InvalidConfig) as exc:
                raise ParseError(f"{path}: {exc}", line=line_no, column=col) from None
    return out


# --- evaluation output ---

def write_eval_csv(path, rows: Sequence[DailyEvalRow], meta: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(_meta_line(meta))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVAL_COLUMNS)
        for r in rows:
            w.writerow([r.day, r.n, _num(r.bias), _num(r.se), _num(r.rmse), int(r.skipped)])


def read_eval_csv(path) -> tuple[list[DailyEvalRow], dict]:
    meta = read_csv_meta(path)
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        lines = _data_lines(fh)
        try:
            header_no, header_line = next(lines)
        except StopIteration:
            raise ParseError(f"{path}: empty file", line=1) from None
        if tuple(next(csv.reader([header_line]))) != EVAL_COLUMNS:
            raise ParseError(f"{path}: header must be {','.join(EVAL_COLUMNS)}", line=header_no)
        opt = lambda s: float(s) if s else None  # noqa: E731
        for line_no, text in lines:
            fields = next(csv.reader([text]))
            if len(fields) != len(EVAL_COLUMNS):
                raise ParseError(f"{path}: expected {len(EVAL_COLUMNS)} fields", line=line_no)
            try:
                day, n, bias, se, rm, skipped = fields
                rows.append(DailyEvalRow(int(day), int(n), opt(bias), opt(se), opt(rm), skipped == "1"))
            except ValueError:
                raise ParseError(f"{path}: bad value", line=line_no) from None
    return rows, meta


def write_plot_csv(path, series: Iterable[tuple[str, str, Sequence[DailyEvalRow]]], meta: dict) -> None:
    """Long-format day-level table ``method,quarter,day,bias,se,rmse`` for external plotting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(_meta_line(meta))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_COLUMNS)
        for method, quarter, rows in series:
            for r in rows:
                if not r.skipped:
                    w.writerow([method, quarter, r.day, _num(r.bias), _num(r.se), _num(r.rmse)])


# --- simulator sidecars ---

def write_truth(path, true_beta: dict, schema: CovariateSchema, intercept: float, seed=None) -> None:
    write_json(
        path,
        {
            "format_version": FORMAT_VERSION,
            "schema_hash": schema.fingerprint,
            "seed": seed,
            "coefficient_names": list(schema.coefficient_names),
            "intercept": intercept,
            "true_beta": {str(q): np.asarray(b).tolist() for q, b in sorted(true_beta.items())},
        },
    )


def write_truth_propensity(path, truth: dict, schema: CovariateSchema, seed=None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(_meta_line({"schema_hash": schema.fingerprint, "seed": seed}))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quarter", "case_id", "day", "attempt", "true_p"])
        for (q, case, day, att), p in sorted(truth.items()):
            w.writerow([q, case, day, att, _num(p)])


def ensure_dir(path) -> None:
    os.makedirs(path, exist_ok=True)
