"""Command-line harness: simulate, fit, build priors, run quarters, summarize.

Every subcommand reads and writes the flat files defined in
:mod:`rsdprior.files`. Failures print one JSON object on stderr, e.g.::

    {"error": "ParseError", "message": "...", "line": 12, "column": "day"}

and exit with status 1 (2 for usage errors, from argparse).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import files
from .errors import InvalidConfig, ParseError, RSDError
from .mcmc import DESK, McmcConfig
from .mle import fit_mle, fit_stats
from .priors import DEFAULT_RIDGE, lastz_prior, last_prior, lit_prior, pwp_prior, standard_prior
from .rsd import DEFAULT_WINDOWS, benchmark_predictions, parse_windows, run_quarter, validate_windows, window_summary
from .simulate import SimConfig, simulate_quarters

log = logging.getLogger("rsdprior")

PROFILES = {"full": McmcConfig(), "desk": DESK}


def _windows_text(windows) -> str:
    return ",".join(f"{lo}-{hi}" for lo, hi in windows)


def _seed_from(meta_seed, explicit):
    if explicit is not None:
        return int(explicit)
    if meta_seed in (None, "", "None"):
        return 0
    return int(meta_seed)


def mcmc_config(args) -> McmcConfig:
    base = PROFILES[args.profile]
    pick = lambda v, d: d if v is None else v  # noqa: E731
    return McmcConfig(
        tune_loops=pick(args.tune, base.tune_loops),
        tune_len=pick(args.tune_len, base.tune_len),
        burn_in=pick(args.burn_in, base.burn_in),
        draws=pick(args.draws, base.draws),
        seed=0,
        target_accept=pick(args.target_accept, base.target_accept),
        init=pick(args.init, base.init),
    )


def load_quarters(calls_path, schema_path, ignore_extra=False):
    schema = files.read_schema(schema_path)
    meta = files.read_csv_meta(calls_path)
    qlen = int(meta.get("quarter_length", 84))
    records = files.read_calls_csv(calls_path, schema, ignore_extra=ignore_extra)
    return schema, files.quarters_from_records(records, schema, qlen), meta


# --- subcommands ---

def cmd_simulate(args) -> None:
    cfg = SimConfig(
        n_quarters=args.quarters,
        cases_per_quarter=args.cases,
        target_rr=None if args.target_rr <= 0 else args.target_rr,
        drift=args.drift,
        seed=args.seed,
    )
    res = simulate_quarters(cfg)
    out = Path(args.out)
    files.ensure_dir(out)
    schema = res.schema
    files.write_schema(out / "schema.json", schema, seed=args.seed)
    files.write_calls_csv(out / "calls.csv", res.quarters, schema, seed=args.seed)
    files.write_truth(out / "truth.json", res.true_beta, schema, res.intercept, seed=args.seed)
    files.write_truth_propensity(out / "truth_propensity.csv", res.true_propensity, schema, seed=args.seed)
    log.info("simulated %d quarters into %s", len(res.quarters), out)


def cmd_fit(args) -> None:
    schema, quarters, meta = load_quarters(args.calls, args.schema, args.ignore_extra)
    seed = _seed_from(meta.get("seed"), args.seed)
    wanted = quarters.keys() if not args.quarter else args.quarter
    out = Path(args.out)
    files.ensure_dir(out)
    for q in wanted:
        if q not in quarters:
            raise InvalidConfig(f"quarter {q} not present in {args.calls}")
        data = quarters[q].dataset
        est = fit_mle(data, quarter=q)
        stats = fit_stats(est, data, args.hl_groups)
        files.write_fit(out / f"fit_q{q}.json", est, stats, seed=seed, coefficient_names=schema.coefficient_names)


def cmd_prior(args) -> None:
    seed = args.seed
    if args.method == "standard":
        schema = files.read_schema(args.schema)
        prior = standard_prior(schema.coefficient_count, args.variance, schema.fingerprint)
    elif args.method == "pwp":
        fits = [files.read_fit(p) for p in args.fits]
        seed = _seed_from(files.read_json(args.fits[0]).get("seed"), seed)
        weights = [float(w) for w in args.weights.split(",")] if args.weights else None
        prior = pwp_prior(fits, lam=args.lam, weights=weights)
    elif args.method in ("last", "lastz"):
        fit = files.read_fit(args.fit)
        seed = _seed_from(files.read_json(args.fit).get("seed"), seed)
        prior = last_prior(fit) if args.method == "last" else lastz_prior(fit)
    else:
        schema = files.read_schema(args.schema)
        entries = files.read_lit_crosswalk(args.crosswalk)
        prior = lit_prior(entries, schema, args.fallback_mean, args.fallback_variance)
    files.write_prior(args.out, prior, seed=seed)


def cmd_run_quarter(args) -> None:
    schema, quarters, meta = load_quarters(args.calls, args.schema, args.ignore_extra)
    prior = files.read_prior(args.prior)
    files.check_fingerprints(
        ("calls", meta.get("schema_hash")), ("schema", schema.fingerprint), ("prior", prior.schema_hash)
    )
    if args.quarter not in quarters:
        raise InvalidConfig(f"quarter {args.quarter} not present in {args.calls}")
    seed = _seed_from(meta.get("seed"), args.seed)
    cfg = mcmc_config(args).with_seed(seed)
    q = quarters[args.quarter]
    rows = run_quarter(
        q, prior, cfg, start_day=args.start_day, master_seed=seed,
        exclude_current_day=args.exclude_current_day, jobs=args.jobs,
    )
    meta_out = {
        "schema_hash": schema.fingerprint, "seed": seed,
        "method": prior.method, "quarter": q.quarter_id,
    }
    files.write_eval_csv(args.out, rows, meta_out)
    if args.diagnostics:
        files.write_json(
            args.diagnostics,
            {
                "format_version": files.FORMAT_VERSION, **meta_out,
                "mcmc": cfg.to_dict() | {"seed": seed},
                "days": [{"day": r.day, **r.diagnostics} for r in rows if r.diagnostics],
            },
        )


def _load_evals(paths):
    loaded = []
    for p in paths:
        rows, meta = files.read_eval_csv(p)
        loaded.append((p, rows, meta))
    files.check_fingerprints(*[(str(p), m.get("schema_hash")) for p, _, m in loaded])
    return loaded


def cmd_summarize(args) -> None:
    windows = parse_windows(args.windows)
    loaded = _load_evals(args.eval)
    out = []
    for p, rows, meta in loaded:
        qlen = max(r.day for r in rows) if rows else 84
        validate_windows(windows, max(qlen, windows[-1][1]))
        out.append(
            {
                "file": os.path.basename(p),
                "method": meta.get("method"),
                "quarter": meta.get("quarter"),
                "windows": window_summary(rows, windows),
            }
        )
    first = loaded[0][2] if loaded else {}
    obj = {
        "format_version": files.FORMAT_VERSION,
        "schema_hash": first.get("schema_hash"),
        "seed": _seed_from(first.get("seed"), None),
        "summaries": out,
    }
    if args.out:
        files.write_json(args.out, obj)
    else:
        json.dump(obj, sys.stdout, indent=2)
        sys.stdout.write("\n")


def cmd_report(args) -> None:
    loaded = _load_evals(args.eval)
    first = loaded[0][2] if loaded else {}
    series = [(m.get("method", "unknown"), m.get("quarter", ""), rows) for _, rows, m in loaded]
    files.write_plot_csv(
        args.out, series, {"schema_hash": first.get("schema_hash"), "seed": first.get("seed")}
    )


# --- experiment ---

@dataclass
class ExperimentConfig:
    """One end-to-end run, loaded from JSON.

    ``data_dir`` holds ``schema.json`` and ``calls.csv``; if they do not
    exist the data are simulated there from ``simulate``. Priors for every
    entry of ``methods`` are built from ``prior_quarters`` (LAST and LASTZ
    use the last of them) and each target quarter is run under each prior.
    Relative paths resolve against the working directory. The master
    ``seed`` also seeds the simulation.
    """

    data_dir: str
    out_dir: str
    methods: list = field(default_factory=lambda: ["standard", "pwp", "lastz"])
    prior_quarters: list = field(default_factory=lambda: list(range(1, 9)))
    target_quarters: list = field(default_factory=lambda: [9])
    lam: float = DEFAULT_RIDGE
    weights: list | None = None
    crosswalk: str | None = None
    fallback_variance: float = 10.0
    mcmc: dict = field(default_factory=dict)
    profile: str = "desk"
    start_day: int = 7
    windows: str = _windows_text(DEFAULT_WINDOWS)
    seed: int = 0
    jobs: int = 1
    exclude_current_day: bool = False
    simulate: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        obj = files.read_json(path)
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known - {"format_version"}
        if unknown:
            raise InvalidConfig(f"unknown experiment config keys {sorted(unknown)}")
        obj.pop("format_version", None)
        cfg = cls(**obj)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for m in self.methods:
            if m not in ("standard", "pwp", "last", "lastz", "lit"):
                raise InvalidConfig(f"unknown prior method {m!r}")
        if "lit" in self.methods:
            if not self.crosswalk or not os.path.exists(self.crosswalk):
                raise FileNotFoundError(f"crosswalk file {self.crosswalk!r} not found")
        if self.profile not in PROFILES:
            raise InvalidConfig(f"profile must be one of {sorted(PROFILES)}")
        unknown = set(self.mcmc) - {f.name for f in fields(McmcConfig)}
        if unknown:
            raise InvalidConfig(f"unknown mcmc keys {sorted(unknown)}")
        if set(self.prior_quarters) & set(self.target_quarters):
            raise InvalidConfig("prior and target quarters overlap")
        if self.jobs < 1:
            raise InvalidConfig("jobs must be >= 1")
        if "seed" in self.simulate:
            raise InvalidConfig("set the master seed at top level, not under 'simulate'")
        sim_fields = {f.name for f in fields(SimConfig)}
        unknown = set(self.simulate) - sim_fields
        if unknown:
            raise InvalidConfig(f"unknown simulate keys {sorted(unknown)}")

    def mcmc_config(self) -> McmcConfig:
        base = PROFILES[self.profile].to_dict() | self.mcmc
        return McmcConfig(**base).with_seed(self.seed)


def run_experiment(cfg: ExperimentConfig) -> dict:
    data = Path(cfg.data_dir)
    out = Path(cfg.out_dir)
    calls, schema_path = data / "calls.csv", data / "schema.json"
    if not calls.exists() or not schema_path.exists():
        sim = SimConfig(seed=cfg.seed, **cfg.simulate)
        res = simulate_quarters(sim)
        files.ensure_dir(data)
        files.write_schema(schema_path, res.schema, seed=cfg.seed)
        files.write_calls_csv(calls, res.quarters, res.schema, seed=cfg.seed)
        files.write_truth(data / "truth.json", res.true_beta, res.schema, res.intercept, seed=cfg.seed)
        files.write_truth_propensity(data / "truth_propensity.csv", res.true_propensity, res.schema, seed=cfg.seed)
    schema, quarters, meta = load_quarters(calls, schema_path)
    files.check_fingerprints(("calls", meta.get("schema_hash")), ("schema", schema.fingerprint))
    windows = parse_windows(cfg.windows)
    qlen = next(iter(quarters.values())).quarter_length
    validate_windows(windows, qlen)
    for q in list(cfg.prior_quarters) + list(cfg.target_quarters):
        if q not in quarters:
            raise InvalidConfig(f"quarter {q} not present in {calls}")

    files.ensure_dir(out / "fits")
    files.ensure_dir(out / "priors")
    files.ensure_dir(out / "eval")
    fits = []
    for q in cfg.prior_quarters:
        d = quarters[q].dataset
        est = fit_mle(d, quarter=q)
        files.write_fit(out / "fits" / f"fit_q{q}.json", est, fit_stats(est, d), seed=cfg.seed,
                        coefficient_names=schema.coefficient_names)
        fits.append(est)

    priors = {}
    for m in cfg.methods:
        if m == "standard":
            p = standard_prior(schema.coefficient_count, schema_hash=schema.fingerprint)
        elif m == "pwp":
            p = pwp_prior(fits, lam=cfg.lam, weights=cfg.weights)
        elif m == "last":
            p = last_prior(fits[-1])
        elif m == "lastz":
            p = lastz_prior(fits[-1])
        else:
            p = lit_prior(files.read_lit_crosswalk(cfg.crosswalk), schema,
                          fallback_variance=cfg.fallback_variance)
        files.write_prior(out / "priors" / f"prior_{m}.json", p, seed=cfg.seed)
        priors[m] = p

    mcfg = cfg.mcmc_config()
    evals, summaries = [], []
    for q in cfg.target_quarters:
        bench = benchmark_predictions(quarters[q])
        for m, p in priors.items():
            rows = run_quarter(
                quarters[q], p, mcfg, start_day=cfg.start_day, master_seed=cfg.seed,
                exclude_current_day=cfg.exclude_current_day, jobs=cfg.jobs, benchmark=bench,
            )
            path = out / "eval" / f"eval_{m}_q{q}.csv"
            files.write_eval_csv(path, rows, {"schema_hash": schema.fingerprint, "seed": cfg.seed,
                                              "method": m, "quarter": q})
            evals.append((m, q, rows))
            summaries.append({"file": path.name, "method": m, "quarter": str(q),
                              "windows": window_summary(rows, windows)})
    summary = {"format_version": files.FORMAT_VERSION, "schema_hash": schema.fingerprint,
               "seed": cfg.seed, "summaries": summaries}
    files.write_json(out / "summary.json", summary)
    files.write_plot_csv(out / "plot.csv", [(m, str(q), r) for m, q, r in evals],
                         {"schema_hash": schema.fingerprint, "seed": cfg.seed})
    return summary


def cmd_experiment(args) -> None:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.jobs is not None:
        cfg.jobs = args.jobs
    run_experiment(cfg)


# --- parser ---

def _add_mcmc_flags(p) -> None:
    g = p.add_argument_group("sampler")
    g.add_argument("--profile", choices=sorted(PROFILES), default="full",
                   help="full: 5000 draws; desk: 1000 draws (explicit flags win)")
    g.add_argument("--tune", type=int, default=None, help="tuning loops (default 100)")
    g.add_argument("--tune-len", type=int, default=None, help="proposals per tuning loop (default 50)")
    g.add_argument("--burn-in", type=int, default=None, help="default 1000")
    g.add_argument("--draws", type=int, default=None, help="retained draws (default 5000)")
    g.add_argument("--target-accept", type=float, default=None)
    g.add_argument("--init", choices=("auto", "mle", "prior-mean", "zero"), default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rsdprior", description="Daily Bayesian response-propensity prediction.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate synthetic quarters")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--quarters", type=int, default=9)
    p.add_argument("--cases", type=int, default=450, help="cases per quarter")
    p.add_argument("--target-rr", type=float, default=0.89, help="case response rate; <= 0 disables calibration")
    p.add_argument("--drift", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="per-quarter maximum likelihood fits")
    p.add_argument("--calls", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True, help="output directory for fit_q<Q>.json")
    p.add_argument("--quarter", type=int, action="append", help="repeatable; default all")
    p.add_argument("--hl-groups", type=int, default=10)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--ignore-extra", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("prior", help="build a prior")
    psub = p.add_subparsers(dest="method", required=True)
    s = psub.add_parser("standard")
    s.add_argument("--schema", required=True)
    s.add_argument("--variance", type=float, default=1e6)
    s = psub.add_parser("pwp")
    s.add_argument("--fits", nargs="+", required=True)
    s.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_RIDGE)
    s.add_argument("--weights", default=None, help="comma-separated, one per fit")
    for m in ("last", "lastz"):
        s = psub.add_parser(m)
        s.add_argument("--fit", required=True)
    s = psub.add_parser("lit")
    s.add_argument("--crosswalk", required=True)
    s.add_argument("--schema", required=True)
    s.add_argument("--fallback-mean", type=float, default=0.0)
    s.add_argument("--fallback-variance", type=float, default=10.0)
    for s in psub.choices.values():
        s.add_argument("--out", required=True)
        s.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_prior)

    p = sub.add_parser("run-quarter", help="daily predictions and evaluation for one quarter")
    p.add_argument("--calls", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--quarter", type=int, required=True)
    p.add_argument("--out", required=True, help="eval CSV")
    p.add_argument("--diagnostics", default=None, help="optional JSON of per-day sampler diagnostics")
    p.add_argument("--start-day", type=int, default=7)
    p.add_argument("--seed", type=int, default=None, help="master seed (default: the data's seed)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--exclude-current-day", action="store_true")
    p.add_argument("--ignore-extra", action="store_true")
    _add_mcmc_flags(p)
    p.set_defaults(func=cmd_run_quarter)

    p = sub.add_parser("summarize", help="window statistics over eval files")
    p.add_argument("--eval", nargs="+", required=True)
    p.add_argument("--windows", default=_windows_text(DEFAULT_WINDOWS))
    p.add_argument("--out", default=None, help="JSON path (default stdout)")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("report", help="long-format plot CSV from eval files")
    p.add_argument("--eval", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("experiment", help="run a full pipeline from a JSON config")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=cmd_experiment)
    return ap


def _error_json(exc: BaseException) -> str:
    if isinstance(exc, FileNotFoundError):
        kind = "FileNotFound"
        msg = f"{exc.strerror or 'not found'}: {exc.filename}" if exc.filename else str(exc)
    elif isinstance(exc, RSDError):
        kind, msg = exc.kind, str(exc)
    else:
        kind, msg = type(exc).__name__, str(exc)
    obj = {"error": kind, "message": msg.replace("\n", " ")}
    if isinstance(exc, ParseError):
        obj["line"] = exc.line
        obj["column"] = exc.column
    return json.dumps(obj)


def main(argv=None) -> int:
    level = os.environ.get("RSD_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
            raise InvalidConfig("--jobs must be >= 1")
        args.func(args)
    except (RSDError, FileNotFoundError, OSError, KeyError, ValueError) as exc:
        print(_error_json(exc), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
