"""Command-line interface: ``trialspline <subcommand> ...``.

Exit codes: 0 success, 1 runtime error, 2 usage error. Every run prints a
header with the fully resolved configuration (defaults included).

Model specs for ``aic-table --models`` use the grammar ``mean:cov[:+version]``
where mean is ``cat``, ``linear``, ``ncs:DF`` or ``prop`` and cov is one of
un, har1, car1cp, car1exp, ri, rs, iid. Examples: ``ncs:2:un:+version``,
``cat:un``, ``prop:ri``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .covariance import CovKind, CovSpec
from .dataset import load_csv, write_csv
from .errors import TrialSplineError
from .estimator import fit
from .harness import ARMS, default_workers, format_table, run_study, summary_csv
from .inference import contrast_curve, emm_contrast, mean_curve, wald_theta
from .meanmodel import MeanKind, MeanSpec
from .ncs_basis import make_basis, make_basis_explicit
from .padsim import PadConfig, simulate_trial

log = logging.getLogger("trialspline")

COV_CHOICES = [k.value for k in CovKind if k is not CovKind.INDEPENDENT] + ["iid"]


class UsageError(Exception):
    pass


# parsing helpers ---------------------------------------------------------------

def parse_mean(text: str, K: int | None = None, covariates=(), version_effect=False) -> MeanSpec:
    text = text.strip().lower()
    if text.startswith("ncs"):
        _, _, df = text.partition(":")
        try:
            df = int(df or 2)
        except ValueError:
            raise UsageError(f"bad spline df in {text!r}") from None
        return MeanSpec(MeanKind.SPLINE, df=df, covariates=tuple(covariates), version_effect=version_effect)
    try:
        kind = MeanKind(text)
    except ValueError:
        raise UsageError(f"unknown mean structure {text!r}") from None
    return MeanSpec(kind, K=K if kind in (MeanKind.CATEGORICAL, MeanKind.PROPORTIONAL) else None,
                    covariates=tuple(covariates), version_effect=version_effect)


def parse_model(text: str):
    """``mean:cov[:+version]`` -> (mean text, cov kind, version flag)."""
    parts = [p for p in text.strip().split(":") if p]
    version = False
    if parts and parts[-1] == "+version":
        version = True
        parts = parts[:-1]
    if len(parts) >= 2 and parts[0] == "ncs" and parts[1].isdigit():
        parts = [f"ncs:{parts[1]}"] + parts[2:]
    if len(parts) != 2:
        raise UsageError(f"model spec {text!r} is not of the form mean:cov[:+version]")
    mean, cov = parts
    try:
        CovKind(cov)
    except ValueError:
        raise UsageError(f"unknown covariance {cov!r} in {text!r}") from None
    return mean, cov, version


def _csv_list(text):
    if text is None:
        return []
    return [t.strip() for t in text.split(",") if t.strip()]


def _float_list(text):
    try:
        return [float(t) for t in _csv_list(text)]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _echo_header(args, out=None):
    out = out or sys.stdout
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    out.write(f"# trialspline {__version__} {args.command}\n")
    out.write("# config: " + json.dumps(cfg, default=str, sort_keys=True) + "\n")
    return cfg


def _resolved_K(args, data):
    return args.K if args.K is not None else int(np.max(data.visit))


def _fit_from_args(args, data, mean_text=None, cov_text=None, version=None):
    mean = parse_mean(mean_text or args.mean, _resolved_K(args, data), _csv_list(args.covariates),
                      args.version_effect if version is None else version)
    cov = CovSpec(CovKind(cov_text or args.cov), K=_resolved_K(args, data))
    if mean.kind is MeanKind.CATEGORICAL and np.any(np.abs(np.asarray(data.month) - np.asarray(data.target_month)) > 1e-9):
        log.warning("note: categorical time uses visit numbers; actual months differ from "
                    "scheduled months and are ignored by the mean model")
    return fit(mean, cov, data)


def _write_rows(path, rows, fields):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _grid(fitres, data, step):
    if fitres.mean.kind in (MeanKind.CATEGORICAL, MeanKind.PROPORTIONAL):
        return [t for _, t in fitres.mean.schedule]
    hi = float(np.max(data.target_month))
    return list(np.round(np.arange(0.0, hi + 1e-9, step), 10))


# subcommands ---------------------------------------------------------------------

def cmd_fit(args):
    cfg = _echo_header(args)
    data = load_csv(args.data)
    res = _fit_from_args(args, data)
    times = _float_list(args.times) if args.times else _grid(res, data, args.grid_step)
    doc = {"config": cfg, "fit": res.to_dict()}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=2, default=str) + "\n")
    stem = out.with_suffix("")
    curve = mean_curve(res, times)
    _write_rows(f"{stem}_mean_curve.csv", curve, ["model", "arm", "time", "estimate", "se"])
    if res.mean.kind is MeanKind.PROPORTIONAL:
        contrasts = [emm_contrast(res, t) for t in times]
    else:
        contrasts = contrast_curve(res, times)
    _write_rows(f"{stem}_contrast_curve.csv", [c.to_dict() for c in contrasts],
                list(contrasts[0].to_dict()))
    print(f"loglik={res.loglik:.6f} aic={res.aic:.4f} converged={res.converged}")
    for n, b in zip(res.names, res.beta):
        print(f"{n}\t{b:.6g}")
    if res.warnings:
        print("warnings: " + "; ".join(res.warnings))
    print(f"wrote {out}, {stem}_mean_curve.csv, {stem}_contrast_curve.csv")
    return 0


def cmd_contrast(args):
    _echo_header(args)
    data = load_csv(args.data)
    res = _fit_from_args(args, data)
    times = _float_list(args.at)
    if not times:
        raise UsageError("--at needs at least one time")
    rows = []
    for t in times:
        if res.mean.kind is MeanKind.PROPORTIONAL and args.wald:
            c = wald_theta(res)
        else:
            c = emm_contrast(res, t, version_policy=args.version_policy, se_method=args.se)
        rows.append(c.to_dict())
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return 0


def cmd_aic_table(args):
    _echo_header(args)
    models = _csv_list(args.models)
    if not models:
        raise UsageError("--models needs at least one model spec")
    parsed = [(m, *parse_model(m)) for m in models]
    data = load_csv(args.data)
    rows = []
    for text, mean, cov, version in parsed:
        try:
            res = _fit_from_args(args, data, mean, cov, version)
            rows.append({"model": text, "loglik": res.loglik, "n_params": res.n_params, "aic": res.aic,
                         "warnings": ";".join(res.warnings), "error": ""})
        except (TrialSplineError, np.linalg.LinAlgError, ValueError) as exc:
            rows.append({"model": text, "loglik": math.nan, "n_params": "", "aic": math.nan,
                         "warnings": "", "error": f"{type(exc).__name__}: {exc}"})
    finite = [r["aic"] for r in rows if math.isfinite(r["aic"])]
    best = min(finite) if finite else math.nan
    for r in rows:
        r["delta_aic"] = r["aic"] - best if math.isfinite(r["aic"]) else math.nan
    rows.sort(key=lambda r: (not math.isfinite(r["aic"]), r["aic"] if math.isfinite(r["aic"]) else 0))
    fields = ["model", "loglik", "n_params", "aic", "delta_aic", "warnings", "error"]
    w = csv.DictWriter(sys.stdout, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return 0


def cmd_basis(args):
    _echo_header(args)
    if args.knots is not None or args.boundary is not None:
        boundary = _float_list(args.boundary)
        if len(boundary) != 2:
            raise UsageError("--boundary needs two numbers")
        basis = make_basis_explicit(tuple(boundary), tuple(_float_list(args.knots)))
    elif args.data:
        basis = make_basis(load_csv(args.data).month, args.df)
    elif args.times:
        basis = make_basis(_float_list(args.times), args.df)
    else:
        raise UsageError("give --data, --times, or --boundary/--knots")
    print("# basis: " + json.dumps(basis.to_dict()))
    at = _float_list(args.at) if args.at else list(np.linspace(basis.boundary[0], basis.boundary[1], 11))
    vals = basis(np.asarray(at, dtype=float), deriv=args.deriv)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["t"] + [f"ns{k}" for k in range(1, basis.m + 1)])
    for t, row in zip(at, vals):
        w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
    return 0


def _config_from_args(args) -> PadConfig:
    config = PadConfig.scenario(args.scenario, delta=args.delta)
    if getattr(args, "n_subjects", None):
        config = replace(config, n_subjects=args.n_subjects)
    if getattr(args, "design_seed", None) is not None:
        config = replace(config, seed=args.design_seed)
    return config


def cmd_simulate(args):
    _echo_header(args)
    config = _config_from_args(args)
    data = simulate_trial(config, args.seed, effect_on=not args.null)
    write_csv(data, args.out)
    print(f"wrote {data.n_obs} rows for {data.n_subjects} subjects to {args.out}")
    return 0


def cmd_power(args):
    if args.replicates < 1:
        raise UsageError("--replicates must be >= 1")
    _echo_header(args)
    config = _config_from_args(args)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / ".write_test").write_text("")
        (out / ".write_test").unlink()
    except OSError as exc:
        raise TrialSplineError(f"output directory {out} is not writable: {exc}") from None
    arms = tuple(_csv_list(args.arms)) or ARMS
    summaries = run_study(args.scenario, arms=arms, replicates=args.replicates, config=config,
                          workers=args.workers, master_seed=args.seed, out=out / "records.csv",
                          resume=not args.no_resume)
    summary_csv(summaries, out / "summary.csv")
    table = format_table(summaries)
    clean = format_table(summaries, clean=True)
    (out / "table.txt").write_text(table + "\n")
    (out / "table_clean.txt").write_text(clean + "\n")
    print(table)
    print("\n# warning-free fits only")
    print(clean)
    return 0


# parser --------------------------------------------------------------------------

def _add_model_args(p, need_model=True):
    p.add_argument("--data", required=True, help="trial CSV (id, arm, visit, target_month, month, version, y, ...)")
    if need_model:
        p.add_argument("--mean", required=True, help="cat | linear | ncs:DF | prop")
        p.add_argument("--cov", required=True, choices=COV_CHOICES)
        p.add_argument("--version-effect", action="store_true", help="add test-version fixed effects")
    p.add_argument("--covariates", default="", help="comma-separated covariate columns")
    p.add_argument("--K", type=int, default=None, help="number of scheduled visits (default: max visit)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trialspline", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--config", help="JSON file of option defaults; command-line flags win")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one model; write JSON plus mean/contrast curve CSVs")
    _add_model_args(p)
    p.add_argument("--out", required=True, help="output JSON path")
    p.add_argument("--times", help="comma-separated curve times (months)")
    p.add_argument("--grid-step", type=float, default=1.0, help="curve grid step for continuous time")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("contrast", help="active minus placebo at given months")
    _add_model_args(p)
    p.add_argument("--at", required=True, help="comma-separated months")
    p.add_argument("--se", choices=["model", "sandwich"], default="model")
    p.add_argument("--version-policy", choices=["equal", "observed"], default="equal")
    p.add_argument("--wald", action="store_true", help="proportional model: report the theta Wald test")
    p.set_defaults(func=cmd_contrast)

    p = sub.add_parser("aic-table", help="fit several models and rank them by AIC")
    _add_model_args(p, need_model=False)
    p.add_argument("--models", required=True, help="comma-separated mean:cov[:+version] specs")
    p.set_defaults(func=cmd_aic_table)

    p = sub.add_parser("basis", help="evaluate a natural cubic spline basis")
    p.add_argument("--data", help="CSV whose months define the knots")
    p.add_argument("--times", help="comma-separated times defining the knots")
    p.add_argument("--df", type=int, default=2)
    p.add_argument("--boundary", help="lo,hi boundary knots (with --knots)")
    p.add_argument("--knots", help="comma-separated interior knots")
    p.add_argument("--at", help="comma-separated evaluation times")
    p.add_argument("--deriv", type=int, default=0, choices=[0, 1, 2])
    p.set_defaults(func=cmd_basis)

    def add_sim(p):
        p.add_argument("--scenario", choices=["pad", "pad-covid"], default="pad")
        p.add_argument("--delta", type=float, default=PadConfig.delta)
        p.add_argument("--n-subjects", type=int, default=PadConfig.n_subjects)
        p.add_argument("--design-seed", type=int, default=PadConfig.seed)

    p = sub.add_parser("simulate", help="write one simulated PAD trial to CSV")
    add_sim(p)
    p.add_argument("--seed", type=int, default=1, help="replicate seed (arms and residuals)")
    p.add_argument("--null", action="store_true", help="no treatment effect")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("power", help="Monte Carlo power / Type I error study")
    add_sim(p)
    p.add_argument("--replicates", type=int, default=1000)
    p.add_argument("--seed", type=int, default=20211127, help="master seed")
    p.add_argument("--workers", type=int, default=default_workers())
    p.add_argument("--arms", default="power,type1")
    p.add_argument("--no-resume", action="store_true", help="start the record file afresh")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_power)
    return parser


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        cfg = json.loads(Path(known.config).read_text())
    except (OSError, ValueError) as exc:
        parser.error(f"cannot read config {known.config}: {exc}")
    if not isinstance(cfg, dict):
        parser.error("config file must hold a JSON object")
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for p in sub.choices.values():
        dests = {a.dest for a in p._actions}
        p.set_defaults(**{k: v for k, v in cfg.items() if k in dests})
        for a in p._actions:
            if a.dest in cfg:
                a.required = False


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    _apply_config(parser, argv)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"trialspline: error: {exc}", file=sys.stderr)
        return 2
    except (TrialSplineError, OSError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"trialspline: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
