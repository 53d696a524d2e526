"""Monte Carlo power and Type I error study for the PAD scenarios.

Every replicate draws an arm assignment and residuals from its own seed
(derived from the master seed and the replicate index), builds the outcome
with and without the treatment effect, and fits the five analyses. Results
go to an append-only CSV record file, one row per (replicate, arm, model);
a study can be resumed by re-running it against the same file.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .covariance import CovKind, CovSpec
from .errors import CorruptRecords, TrialSplineError
from .estimator import fit_gls_ml, fit_proportional
from .inference import emm_contrast, wald_theta
from .meanmodel import MeanKind, MeanSpec
from .padsim import (GeneratorModel, N_VISITS, PadConfig, draw_replicate, gen_outcomes,
                     make_design)

ALPHA = 0.05
ANALYSIS_COVARIATES = ("APOE4", "age")
RECORD_FIELDS = ("replicate", "scenario", "arm", "model", "estimate", "se", "df", "t", "p",
                 "obtained", "warnings")
ARMS = ("power", "type1")


@dataclass(frozen=True)
class Analysis:
    key: str
    label: str
    mean: MeanSpec
    cov: CovSpec


def analysis_menu(K: int = N_VISITS, covariates=ANALYSIS_COVARIATES) -> tuple[Analysis, ...]:
    spline = MeanSpec(MeanKind.SPLINE, df=2, covariates=covariates, version_effect=True)
    return (
        Analysis("cat", "Categorical time",
                 MeanSpec(MeanKind.CATEGORICAL, K=K, covariates=covariates),
                 CovSpec(CovKind.UNSTRUCTURED, K=K)),
        Analysis("ncs_uns", "Spline-Unstr.", spline, CovSpec(CovKind.UNSTRUCTURED, K=K)),
        Analysis("ncs_ranslp", "Spline-Random slope", spline, CovSpec(CovKind.RANDOM_SLOPE)),
        Analysis("ncs_car1", "Spline-CAR1", spline, CovSpec(CovKind.CAR1_EXP)),
        Analysis("prop", "Proportional",
                 MeanSpec(MeanKind.PROPORTIONAL, K=K, covariates=covariates),
                 CovSpec(CovKind.RANDOM_INTERCEPT)),
    )


MENU = analysis_menu()
LABELS = {a.key: a.label for a in MENU}


def default_workers() -> int:
    env = os.environ.get("TRIALSPLINE_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, (os.cpu_count() or 1) - 2)


def run_analysis(analysis: Analysis, data, at_time: float) -> dict:
    """Fit one analysis and return its record fields (never raises)."""
    fit = None
    try:
        if analysis.mean.kind is MeanKind.PROPORTIONAL:
            fit = fit_proportional(data, analysis.mean.K, analysis.mean.covariates, analysis.cov)
            c = wald_theta(fit)
        else:
            fit = fit_gls_ml(analysis.mean, analysis.cov, data)
            c = emm_contrast(fit, at_time)
    except (TrialSplineError, np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
        notes = list(fit.warnings) if fit is not None else []
        if not notes:
            notes.append(f"{type(exc).__name__}: {exc}")
        return {"model": analysis.key, "estimate": math.nan, "se": math.nan, "df": math.nan,
                "t": math.nan, "p": math.nan, "obtained": False, "warnings": ";".join(notes)}
    obtained = math.isfinite(c.p_value)
    return {"model": analysis.key, "estimate": c.estimate, "se": c.se, "df": c.df,
            "t": c.t_ratio, "p": c.p_value, "obtained": obtained,
            "warnings": ";".join(fit.warnings)}


def replicate_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(index)])


@dataclass(frozen=True)
class StudyJob:
    scenario: str
    config: PadConfig
    arms: tuple
    master_seed: int
    redraw_design: bool = False
    analyses: tuple = field(default_factory=lambda: tuple(a.key for a in MENU))
    at_time: float = 54.0


def run_replicate(job: StudyJob, index: int) -> list[dict]:
    model = GeneratorModel()
    if job.redraw_design:
        design_rng = np.random.default_rng(np.random.SeedSequence([job.master_seed, index, 1]))
        design = make_design(job.config, model, design_rng)
    else:
        design = _design_for(job.config)
    rep = draw_replicate(design, model, np.random.default_rng(replicate_seed(job.master_seed, index)))
    rows = []
    for arm in job.arms:
        data = gen_outcomes(design, rep, job.config, effect_on=(arm == "power"))
        for analysis in MENU:
            if analysis.key not in job.analyses:
                continue
            rec = run_analysis(analysis, data, job.at_time)
            rows.append({"replicate": index, "scenario": job.scenario, "arm": arm, **rec})
    return rows


_DESIGNS: dict = {}


def _design_for(config: PadConfig):
    if config not in _DESIGNS:
        _DESIGNS[config] = make_design(config)
    return _DESIGNS[config]


def _run_one(args):
    job, index = args
    return run_replicate(job, index)


# record file -----------------------------------------------------------------

def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return "NA" if math.isnan(v) else repr(v)
    return str(v)


def read_records(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise CorruptRecords(f"{path} does not exist")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != RECORD_FIELDS:
            raise CorruptRecords(f"{path}: unexpected header {reader.fieldnames}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                rec = {"replicate": int(row["replicate"]), "scenario": row["scenario"],
                       "arm": row["arm"], "model": row["model"],
                       "obtained": row["obtained"] == "1", "warnings": row["warnings"]}
                for k in ("estimate", "se", "df", "t", "p"):
                    rec[k] = math.nan if row[k] in ("NA", "") else float(row[k])
            except (TypeError, ValueError) as exc:
                raise CorruptRecords(f"{path}:{lineno}: {exc}") from None
            if rec["arm"] not in ARMS:
                raise CorruptRecords(f"{path}:{lineno}: unknown arm {rec['arm']!r}")
            out.append(rec)
    return out


def _write_rows(fh, rows):
    w = csv.writer(fh, lineterminator="\n")
    for r in rows:
        w.writerow([_fmt(r[k]) for k in RECORD_FIELDS])
    fh.flush()


# summaries -------------------------------------------------------------------

@dataclass(frozen=True)
class PowerSummary:
    scenario: str
    arm: str
    model: str
    replicates: int
    n_obtained: int
    n_rejected: int
    n_clean: int
    n_rejected_clean: int

    @property
    def rejection_rate(self) -> float:
        return self.n_rejected / self.n_obtained if self.n_obtained else math.nan

    @property
    def rejection_rate_clean(self) -> float:
        return self.n_rejected_clean / self.n_clean if self.n_clean else math.nan

    @property
    def mc_se(self) -> float:
        p = self.rejection_rate
        return math.sqrt(p * (1 - p) / self.n_obtained) if self.n_obtained else math.nan

    @property
    def label(self) -> str:
        return LABELS.get(self.model, self.model)

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "arm": self.arm, "model": self.model,
                "replicates": self.replicates, "n_obtained": self.n_obtained,
                "rejection_rate": self.rejection_rate, "mc_se": self.mc_se,
                "n_clean": self.n_clean, "rejection_rate_clean": self.rejection_rate_clean}


def summarize(records) -> list[PowerSummary]:
    """Table-1 style (all obtained p-values) and warning-free summaries."""
    if isinstance(records, (str, Path)):
        records = read_records(records)
    records = list(records)
    if not records:
        raise CorruptRecords("no records")
    groups: dict = {}
    for r in records:
        groups.setdefault((r["scenario"], r["arm"], r["model"]), []).append(r)
    order = {a.key: i for i, a in enumerate(MENU)}
    out = []
    for (scen, arm, model) in sorted(groups, key=lambda k: (k[0], ARMS.index(k[1]) if k[1] in ARMS else 9,
                                                            order.get(k[2], 99), k[2])):
        rows = groups[(scen, arm, model)]
        reps = len({r["replicate"] for r in rows})
        got = [r for r in rows if r["obtained"] and math.isfinite(r["p"])]
        clean = [r for r in got if not r["warnings"]]
        out.append(PowerSummary(scen, arm, model, reps, len(got), sum(r["p"] < ALPHA for r in got),
                                len(clean), sum(r["p"] < ALPHA for r in clean)))
    return out


def summary_csv(summaries: Sequence[PowerSummary], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        keys = list(summaries[0].to_dict())
        w.writerow(keys)
        for s in summaries:
            w.writerow([_fmt(v) for v in s.to_dict().values()])


def format_table(summaries: Sequence[PowerSummary], clean: bool = False) -> str:
    """Aligned text table: Study, Model, Power %, N, Type I %, N."""
    by = {(s.scenario, s.model, s.arm): s for s in summaries}
    scenarios = sorted({s.scenario for s in summaries})
    models = [a.key for a in MENU if any(s.model == a.key for s in summaries)]
    lines = [f"{'Study':<10} {'Model':<20} {'Power %':>8} {'N':>6} {'Type I %':>9} {'N':>6}"]
    for scen in scenarios:
        for m in models:
            cells = []
            for arm in ARMS:
                s = by.get((scen, m, arm))
                if s is None:
                    cells += ["", ""]
                    continue
                rate = s.rejection_rate_clean if clean else s.rejection_rate
                n = s.n_clean if clean else s.n_obtained
                cells += ["NA" if math.isnan(rate) else f"{100 * rate:.2f}", str(n)]
            lines.append(f"{scen:<10} {LABELS.get(m, m):<20} {cells[0]:>8} {cells[1]:>6} "
                         f"{cells[2]:>9} {cells[3]:>6}")
    return "\n".join(lines)


# driver ----------------------------------------------------------------------

def _completed(path, job: StudyJob) -> set:
    """Replicates with a full set of rows already on disk."""
    per = {}
    for r in read_records(path):
        if r["scenario"] == job.scenario:
            per.setdefault(r["replicate"], set()).add((r["arm"], r["model"]))
    need = {(a, m) for a in job.arms for m in job.analyses}
    return {i for i, have in per.items() if need <= have}


def run_study(scenario: str, arms: Iterable[str] = ARMS, replicates: int = 100,
              config: PadConfig | None = None, workers: int = 1, master_seed: int = 20211127,
              out: str | os.PathLike | None = None, resume: bool = True,
              redraw_design: bool = False, analyses: Iterable[str] | None = None,
              progress=None) -> list[PowerSummary]:
    """Run (or resume) a study and return its summaries.

    Rows are written in replicate order regardless of the number of workers,
    so the record file is identical for any worker count.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    arms = tuple(arms)
    for a in arms:
        if a not in ARMS:
            raise ValueError(f"unknown arm {a!r}")
    config = config or PadConfig.scenario(scenario)
    keys = tuple(a.key for a in MENU) if analyses is None else tuple(analyses)
    job = StudyJob(scenario, config, arms, master_seed, redraw_design, keys)

    path = Path(out) if out is not None else None
    done = set()
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.exists() and resume:
            done = _completed(path, job)
            kept = [r for r in read_records(path)
                    if not (r["scenario"] == scenario and r["replicate"] not in done)]
            with open(path, "w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(RECORD_FIELDS)
                _write_rows(fh, kept)
        else:
            with open(path, "w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(RECORD_FIELDS)
    todo = [i for i in range(1, replicates + 1) if i not in done]

    collected = []
    fh = open(path, "a", newline="") if path is not None else None
    try:
        if workers > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = pool.map(_run_one, [(job, i) for i in todo], chunksize=1)
                for rows in results:
                    collected.extend(rows)
                    if fh:
                        _write_rows(fh, rows)
                    if progress:
                        progress(rows)
        else:
            for i in todo:
                rows = run_replicate(job, i)
                collected.extend(rows)
                if fh:
                    _write_rows(fh, rows)
                if progress:
                    progress(rows)
    finally:
        if fh:
            fh.close()
    if path is not None:
        records = [r for r in read_records(path) if r["scenario"] == scenario
                   and r["replicate"] <= replicates]
    else:
        records = collected
    return summarize(records)
