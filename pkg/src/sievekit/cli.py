"""Command-line front end.

Every command writes its report (JSON, plus a flattened CSV) and a
``manifest.json`` describing how to reproduce it into ``--out-dir``, and
echoes the report to stdout in ``--format``.  Exit codes: 0 success,
1 usage, 2 data, 3 numerical degeneracy.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, bounds, dgp, estimands, nulltests, survival
from .data import MarkDichotomizationConfig, ingest_time_fixed, ingest_time_to_event, tabulate, validate
from .data import write_time_fixed, write_time_to_event
from .errors import ConfigurationError, DataError, SieveError
from .uncertainty import BootstrapPlan, bootstrap_ci, log_interval


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1 (argparse defaults to 2, which is reserved for data errors)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --- output helpers ---------------------------------------------------------------


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dumps(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def _rows_csv(rows) -> str:
    keys = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: json.dumps(_plain(v)) if isinstance(v, (list, dict)) else _plain(v) for k, v in r.items()})
    return buf.getvalue()


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Collects output files for one command and writes the manifest."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.out_dir = Path(args.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.inputs = {}
        self.outputs = []

    def input(self, path):
        if path is None:
            raise ConfigurationError(f"{self.args.command} needs --data")
        p = Path(path)
        if not p.is_file():
            raise DataError(f"input file not found: {path}")
        self.inputs[str(path)] = _sha256(p)
        return p

    def path(self, name) -> Path:
        p = Path(name)
        p = p if p.is_absolute() or p.parent != Path(".") else self.out_dir / p
        self.outputs.append(str(p))
        return p

    def write(self, name, text):
        self.path(name).write_text(text)

    def report(self, payload: dict, rows: list):
        name = self.args.command
        payload = {"command": name, "version": __version__, **payload}
        text_json, text_csv = _dumps(payload), _rows_csv(rows)
        self.write(f"{name}.json", text_json)
        self.write(f"{name}.csv", text_csv)
        sys.stdout.write(text_json if self.args.format == "json" else text_csv)

    def manifest(self):
        flags = {k: v for k, v in vars(self.args).items() if k != "func"}
        doc = {
            "command": self.args.command,
            "argv": self.argv,
            "flags": flags,
            "inputs": self.inputs,
            "outputs": sorted(set(self.outputs)),
            "seed": self.args.seed,
            "version": __version__,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        (self.out_dir / "manifest.json").write_text(_dumps(doc))


def _floats(text, name, count=None):
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigurationError(f"--{name}: expected comma-separated numbers, got {text!r}") from None
    if count is not None and len(vals) != count:
        raise ConfigurationError(f"--{name}: expected {count} values, got {len(vals)}")
    return vals


def _windows(text):
    return [survival.parse_window(w) for w in text.split(",") if w.strip()]


def _plan(args, statistic=""):
    return BootstrapPlan(args.boot_reps, args.seed, args.alpha, statistic)


# --- commands ------------------------------------------------------------------------

ESTIMANDS = ("rr1", "rr2", "ccs", "cce", "eie", "eet")


def _estimate(name, table, args, stratum=None, ci=None):
    common = dict(stratum=stratum, alpha=args.alpha, continuity=args.continuity)
    if name in ("rr1", "rr2"):
        return estimands.rr(table, int(name[-1]), interpretation=args.interpretation, ci=ci, **common)
    if name == "ccs":
        return estimands.ccs(table, mode=args.mode, ci=ci, **common)
    if name == "cce":
        return estimands.cce(table, ci=ci, **common)
    if name == "eie":
        return estimands.eie(table, ci=ci, **common)
    return estimands.eet(table, exposure_ratio=args.exposure_ratio, ir0=args.ir0, route=args.route, ci=ci, **common)


def cmd_analyze(args, run):
    config = None
    if args.threshold is not None:
        config = MarkDichotomizationConfig(args.threshold, args.distance_column)
    data = ingest_time_fixed(run.input(args.data), config)
    names = [x.strip() for x in args.estimand.split(",") if x.strip()]
    for n in names:
        if n not in ESTIMANDS:
            raise ConfigurationError(f"unknown estimand {n!r}; choose from {', '.join(ESTIMANDS)}")
    table = tabulate(data, args.stratify)
    strata = [None] if args.stratify is None else [estimands.StratumSelector(args.stratify, lv) for lv in table.strata]
    rows, errors, last = [], [], None
    for name in names:
        ci = args.ci or ("trinomial-f" if name == "eet" else "katz-c")
        boot = ci == "bootstrap"
        for sel in strata:
            try:
                est = _estimate(name, table, args, sel, None if boot else ci)
                if boot:
                    level = None if sel is None else sel.level
                    col = args.stratify

                    def stat(d, name=name, level=level, col=col):
                        sub = d if level is None else d.take(d.covariates[col] == level)
                        return _estimate(name, tabulate(sub), args).point

                    res = bootstrap_ci(data, stat, _plan(args, name), args.workers)
                    est.with_interval(res.lo, res.hi, "bootstrap")
                    est.notes["bootstrap"] = res.summary
            except SieveError as exc:
                if sel is None:
                    raise
                errors.append({"estimand": name, "stratum": sel.label(), "error": str(exc)})
                last = exc
                continue
            rows.append(est.to_dict())
    if not rows:
        raise last
    payload = {"estimates": rows, "counts": table.to_dict(), "validation": validate(data).to_dict(),
               "degenerate_strata": errors, "alpha": args.alpha}
    if args.stratify and any(n in ("eie", "eet") for n in names):
        het = estimands.heterogeneity(table, args.alpha)
        payload["heterogeneity"] = {"q": het.q, "df": het.df, "p_value": het.p_value, "warn": het.warn}
    run.report(payload, rows)


def cmd_tte(args, run):
    events = ingest_time_to_event(run.input(args.data), args.horizon)
    h = survival.discrete_hazards(events)
    K = h.K
    window = survival.parse_window(args.window) if args.window else (1, K)
    methods = ["nonparam", "cox", "nelson-aalen"] if args.method == "all" else [args.method]
    plan = _plan(args) if args.boot_reps else None
    rows = []
    if "nonparam" in methods:
        if args.k is not None:
            est = survival.cse_k_nonparametric(h, args.k)
            stat = lambda ev: survival.cse_k_nonparametric(survival.discrete_hazards(ev), args.k).point
        else:
            est = survival.cse_window(h, window)
            stat = lambda ev: survival.cse_window(survival.discrete_hazards(ev), window).point
        if plan:
            res = bootstrap_ci(events, stat, plan, args.workers)
            est.with_interval(res.lo, res.hi, "bootstrap", alpha=args.alpha)
            est.notes["bootstrap"] = res.summary
        rows.append(est.to_dict())
    if "cox" in methods:
        rows.append(survival.cse_cox(events, plan, args.workers).to_dict())
    if "nelson-aalen" in methods:
        lam = survival.windowed_cumulative_hazard(h, window)
        est = survival.cse_window(h, window)
        lo, hi = log_interval(est.point, survival.cse_window_log_variance(h, window), args.alpha)
        est.with_interval(lo, hi, "delta", alpha=args.alpha)
        est.notes["cumulative_hazard"] = {"cause1": lam[0].tolist(), "cause2": lam[1].tolist()}
        rows.append({**est.to_dict(), "estimand": "cumulative_hazard_ratio"})
    incidence = survival.cumulative_incidence(h)
    k_cce = args.k if args.k is not None else K
    try:
        rows.append(survival.cce_k(incidence, k_cce).to_dict())
    except SieveError as exc:
        rows.append({"estimand": "cce_k", "error": str(exc), "notes": {"k": k_cce}})
    if args.plot:
        from .plotting import incidence_plot

        incidence_plot(incidence, run.path(args.plot))
    run.report({"estimates": rows, "horizon": K, "window": list(window), "alpha": args.alpha,
                "events": h.events.tolist(), "at_risk": h.at_risk.tolist()}, rows)


def _scenario(text):
    p = Path(text)
    return dgp.load_spec(p) if p.suffix == ".json" or p.is_file() else dgp.builtin_scenario(text)


def cmd_simulate(args, run):
    spec = _scenario(args.scenario)
    if args.scenario.endswith(".json"):
        run.inputs[args.scenario] = _sha256(args.scenario)
    if args.export:
        data = dgp.sample(spec, int(float(args.n)), args.seed, args.workers)
        path = run.path(args.export)
        (write_time_to_event if spec.tte is not None else write_time_fixed)(data, path)
    result = None
    if args.reps:
        grid = [int(float(x)) for x in args.n_grid.split(",") if x.strip()]
        est = [x.strip() for x in args.estimators.split(",")] if args.estimators else None
        result = dgp.run_convergence_study(spec, grid, args.reps, est, args.seed, args.workers)
        run.write(args.out, result.rows_csv())
        if args.plot:
            from .plotting import convergence_plot

            convergence_plot(result, run.path(args.plot))
    truth = dgp.oracle(spec)
    payload = {"scenario": spec.to_dict(), "oracle": truth.to_dict()}
    rows = []
    if result is not None:
        payload["summary"] = result.summary
        rows = result.summary
    run.report(payload, rows)


def cmd_bounds(args, run):
    if args.p:
        p = _floats(args.p, "p", 4)
        source = "probabilities"
    else:
        table = tabulate(ingest_time_fixed(run.input(args.data)))
        p = bounds.probabilities_from_counts(table)
        source = "counts"
    if args.baseline:
        b = _floats(args.baseline, "baseline", 2)
        res = bounds.ve_ratio_bounds(p, b, source="--baseline")
    else:
        res = bounds.acece_ratio_bounds(p)
    row = {**res.to_dict(), "input": source}
    run.report({"bounds": row}, [{"target": res.target, "lo": res.lo, "hi": res.hi,
                                  "point_identified": res.point_identified}])


def cmd_test(args, run):
    events = ingest_time_to_event(run.input(args.data), args.horizon)
    ci_method = args.ci_method or ("bootstrap" if args.null == "scaled-infection" else "wald")
    plan = BootstrapPlan(args.boot_reps or 1000, args.seed, args.alpha)
    if args.null == "strong-sharp":
        if args.k is not None:
            res = nulltests.strong_null_test(events, k=args.k, alpha=args.alpha, ci_method=ci_method,
                                             plan=plan, workers=args.workers)
        else:
            win = survival.parse_window(args.window) if args.window else (1, events.horizon)
            res = nulltests.strong_null_test(events, window=win, alpha=args.alpha, ci_method=ci_method,
                                             plan=plan, workers=args.workers)
    elif args.null == "h0w":
        if not args.windows:
            raise ConfigurationError("--null h0w needs --windows, e.g. 1:3,4:6")
        res = nulltests.h0w_test(events, _windows(args.windows), args.alpha, ci_method, plan, args.workers)
    else:
        if not args.covariate:
            raise ConfigurationError("--null scaled-infection needs --covariate")
        res = nulltests.scaled_infection_falsification(
            events, args.covariate, args.alpha, method=args.method, ci_method=ci_method, plan=plan,
            window=survival.parse_window(args.window) if args.window else None, workers=args.workers)
    out = res.to_dict()
    run.report({"test": out}, out["detail"] or [{"statistic": res.statistic, "ci": list(res.ci), "reject": res.reject}])


def cmd_validate(args, run):
    data = ingest_time_fixed(run.input(args.data))
    rules = [x.strip() for x in args.assumptions.split(",") if x.strip()]
    rep = validate(data, rules)
    run.report({"validation": rep.to_dict(), "ok": rep.ok},
               [{"rule": v.rule, "line": v.line, "detail": v.detail} for v in rep.violations])
    if args.strict and not rep.ok:
        raise DataError(f"{len(rep.violations)} assumption violations")


def cmd_replay(args, run):
    doc = json.loads(Path(args.manifest).read_text())
    for path, digest in doc.get("inputs", {}).items():
        if not Path(path).is_file() or _sha256(path) != digest:
            raise DataError(f"input {path} is missing or changed since the manifest was written")
    return main(doc["argv"])


# --- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--data", help="input CSV")
    g.add_argument("--out-dir", default=".", help="directory for reports and manifest (default: .)")
    g.add_argument("--seed", type=int, default=0, help="master seed for resampling and simulation")
    g.add_argument("--alpha", type=float, default=0.05, help="significance level (0.05 gives 95%% intervals)")
    g.add_argument("--format", choices=("json", "csv"), default="json", help="stdout format")
    g.add_argument("--workers", type=int, default=None, help="worker threads (default: $SIEVEKIT_THREADS or 1)")

    parser = _Parser(prog="sievekit", description="Variant-specific treatment effect analysis.")
    parser.add_argument("--version", action="version", version=f"sievekit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze", parents=[common], help="time-fixed estimands")
    p.add_argument("--estimand", default="ccs", help=f"comma list of {', '.join(ESTIMANDS)}")
    p.add_argument("--mode", choices=("observed", "exposure_conditional"), default="observed")
    p.add_argument("--ci", choices=("katz-c", "decomposition", "trinomial-f", "bootstrap", "none"), default=None,
                   help="interval method (default: trinomial-f for eet, katz-c otherwise)")
    p.add_argument("--boot-reps", type=int, default=1000)
    p.add_argument("--continuity", type=float, default=None, help="add this to zero cells")
    p.add_argument("--stratify", help="covariate to stratify by")
    p.add_argument("--interpretation", choices=("cece", "ate"), default="cece")
    p.add_argument("--route", choices=estimands.EET_ROUTES, default="auto")
    p.add_argument("--exposure-ratio", type=float)
    p.add_argument("--ir0", type=float)
    p.add_argument("--threshold", type=float, help="dichotomize distances: below -> variant 1")
    p.add_argument("--distance-column", default="d")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("tte", parents=[common], help="time-to-event estimands")
    p.add_argument("--method", choices=("nonparam", "cox", "nelson-aalen", "all"), default="all")
    p.add_argument("--k", type=int)
    p.add_argument("--window", help="k1:k2 (default: whole follow-up)")
    p.add_argument("--boot-reps", type=int, default=0)
    p.add_argument("--horizon", type=int)
    p.add_argument("--plot", help="SVG file for cumulative incidence curves")
    p.set_defaults(func=cmd_tte)

    p = sub.add_parser("simulate", parents=[common], help="simulation scenarios")
    p.add_argument("--scenario", required=True, help=f"one of {', '.join(dgp.SCENARIOS)} or a JSON spec file")
    p.add_argument("--n-grid", default="1e3,1e4,1e5")
    p.add_argument("--reps", type=int, default=0)
    p.add_argument("--estimators")
    p.add_argument("--out", default="results.csv")
    p.add_argument("--plot")
    p.add_argument("--export", help="write one sampled dataset to this CSV")
    p.add_argument("--n", default="1e4", help="sample size for --export")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bounds", parents=[common], help="partial-identification bounds")
    p.add_argument("--p", help="P(Y=1|A=0),P(Y=1|A=1),P(Y=2|A=0),P(Y=2|A=1)")
    p.add_argument("--baseline", help="P(Y^0=1|E=1),P(Y^0=2|E=2) for vaccine-efficacy ratio bounds")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("test", parents=[common], help="hypothesis tests on time-to-event data")
    p.add_argument("--null", choices=("strong-sharp", "h0w", "scaled-infection"), required=True)
    p.add_argument("--windows")
    p.add_argument("--window")
    p.add_argument("--k", type=int)
    p.add_argument("--covariate")
    p.add_argument("--method", choices=("nonparam", "cox"), default="nonparam")
    p.add_argument("--ci-method", choices=("wald", "bootstrap"), default=None)
    p.add_argument("--boot-reps", type=int, default=0)
    p.add_argument("--horizon", type=int)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("validate", parents=[common], help="check exposure assumptions on measured data")
    p.add_argument("--assumptions", default="A1,A4,A5")
    p.add_argument("--strict", action="store_true", help="exit 2 when violations are found")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "replay":
        try:
            return cmd_replay(args, None)
        except SieveError as exc:
            print(f"sievekit: error: {exc}", file=sys.stderr)
            return exc.exit_code
    try:
        if not 0.0 < args.alpha < 1.0:
            raise ConfigurationError(f"--alpha must be in (0, 1), got {args.alpha}")
        run = Run(args, argv)
        try:
            args.func(args, run)
        finally:
            run.manifest()
    except SieveError as exc:
        print(f"sievekit: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"sievekit: error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
