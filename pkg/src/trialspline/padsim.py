"""Simulated preclinical-AD (PAD) trials, with optional COVID-19 disruption.

Ten visits every six months. The placebo mean is an ADNI-derived natural
spline in years plus covariate and test-version effects; residuals are
multivariate normal with an AR(1)-like correlation and visit-specific
standard deviations. The treatment benefit grows linearly with the visit
number from visit 5 to ``delta`` at visit 10.

The subject table and visit schedule (the "design") and the per-replicate
draws (arm assignment, residuals) use separate random streams so a study can
hold the design fixed across replicates.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .dataset import TrialData
from .ncs_basis import SplineBasis, make_basis_explicit

N_VISITS = 10
TARGET_MONTHS = tuple(float(m) for m in range(0, 60, 6))
VERSION_CYCLE = ("A", "B", "C")

EDU_VALUES = (-10.4, -9.4, -8.4, -7.4, -6.4, -5.4, -4.4, -3.4, -2.4, -1.4, -0.4, 0.6, 1.6, 2.6, 3.6)
EDU_PROBS = (0.001, 0.001, 0.003, 0.001, 0.004, 0.001, 0.072, 0.036, 0.108, 0.042, 0.247, 0.039,
             0.234, 0.052, 0.159)

# correlation of residuals between visits j and k (lag |j-k|)
LAG_CORR = (1.0, 0.791, 0.625, 0.494, 0.391, 0.309, 0.244, 0.193, 0.153, 0.121)
VISIT_SD = (2.934, 3.68, 3.597, 3.465, 3.361, 3.791, 4.008, 4.395, 4.886, 7.042)


def residual_correlation() -> np.ndarray:
    lag = np.abs(np.subtract.outer(np.arange(N_VISITS), np.arange(N_VISITS)))
    return np.asarray(LAG_CORR)[lag]


@dataclass(frozen=True)
class GeneratorModel:
    knots: tuple = (0.4736482, 1.9657769, 4.0082136)       # years
    boundary: tuple = (0.0, 8.476386)
    intercept: float = 0.2800923
    spline_coef: tuple = (0.04380665, -0.4601309, -2.232262, -3.509172)
    apoe4: float = -0.172294862
    edu: float = 0.247813736
    age: float = -0.125623763
    version_effects: tuple = (("B", 0.126458100), ("C", 0.266977394))
    correlation: np.ndarray = field(default_factory=residual_correlation, compare=False)
    visit_sd: tuple = VISIT_SD

    @property
    def basis(self) -> SplineBasis:
        return make_basis_explicit(self.boundary, self.knots)

    @property
    def residual_cov(self) -> np.ndarray:
        sd = np.asarray(self.visit_sd)
        return self.correlation * np.outer(sd, sd)

    def placebo_mean(self, years, apoe4, edu, age, version) -> np.ndarray:
        years = np.asarray(years, dtype=float)
        out = self.intercept + self.basis(years) @ np.asarray(self.spline_coef)
        out = out + self.apoe4 * np.asarray(apoe4) + self.edu * np.asarray(edu) + self.age * np.asarray(age)
        version = np.asarray(version, dtype=object)
        for level, eff in self.version_effects:
            out = out + eff * (version == level)
        return out


@dataclass(frozen=True)
class PadConfig:
    n_subjects: int = 1000
    jitter_sd: float = 0.8
    covid: bool = False
    covid_delay_mean: float = 6.0
    covid_delay_sd: float = 3.0
    covid_delay_range: tuple = (4.0, 12.0)
    covid_start_visits: tuple = (5, 6, 7, 8, 9, 10)
    last_visit_probs: tuple = (0.033,) * 9 + (0.703,)
    delta: float = 1.4
    effect_onset_visit: int = 4
    seed: int = 20211128

    def __post_init__(self):
        if self.n_subjects < 2:
            raise ValueError("n_subjects must be >= 2")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if len(self.last_visit_probs) != N_VISITS or abs(sum(self.last_visit_probs) - 1) > 1e-9:
            raise ValueError("last_visit_probs must have 10 entries summing to 1")

    @classmethod
    def scenario(cls, name: str, **kw) -> "PadConfig":
        name = name.lower()
        if name == "pad":
            return cls(covid=False, **kw)
        if name in ("pad-covid", "pad_covid", "padcovid"):
            return cls(covid=True, **kw)
        raise ValueError(f"unknown scenario {name!r}")

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def rtruncnorm(rng: np.random.Generator, n, mean, sd, lo, hi) -> np.ndarray:
    """Truncated normal draws by rejection from the parent normal."""
    out = np.empty(n)
    filled = 0
    while filled < n:
        draw = rng.normal(mean, sd, size=max(2 * (n - filled), 16))
        draw = draw[(draw >= lo) & (draw <= hi)]
        take = min(len(draw), n - filled)
        out[filled:filled + take] = draw[:take]
        filled += take
    return out


def gen_subjects(config: PadConfig, rng: np.random.Generator) -> pd.DataFrame:
    n = config.n_subjects
    age = rng.normal(0.0, 6.0, size=n)
    edu = rng.choice(np.asarray(EDU_VALUES), size=n, p=np.asarray(EDU_PROBS) / sum(EDU_PROBS))
    apoe4 = rng.choice([0.0, 1.0], size=n, p=[0.70, 0.30])
    delay = rtruncnorm(rng, n, config.covid_delay_mean, config.covid_delay_sd, *config.covid_delay_range)
    start = rng.choice(np.asarray(config.covid_start_visits), size=n)
    last = rng.choice(np.arange(1, N_VISITS + 1), size=n, p=np.asarray(config.last_visit_probs))
    return pd.DataFrame({"id": np.arange(1, n + 1), "age": age, "edu": edu, "APOE4": apoe4,
                         "covid_delay": delay, "covid_start": start, "last_visit": last})


def gen_visits(subjects: pd.DataFrame, config: PadConfig, rng: np.random.Generator) -> pd.DataFrame:
    """Long visit schedule with jittered months, COVID shifts and dropout applied."""
    n = len(subjects)
    visit = np.tile(np.arange(1, N_VISITS + 1), n)
    sid = np.repeat(subjects["id"].to_numpy(), N_VISITS)
    target = np.asarray(TARGET_MONTHS)[visit - 1]
    jitter = rng.normal(0.0, config.jitter_sd, size=(N_VISITS, n)).T.ravel()
    jitter[visit == 1] = 0.0
    month = target + jitter
    if config.covid:
        start = np.repeat(subjects["covid_start"].to_numpy(), N_VISITS)
        delay = np.repeat(subjects["covid_delay"].to_numpy(), N_VISITS)
        month = np.where(visit >= start, month + delay, month)
    keep = visit <= np.repeat(subjects["last_visit"].to_numpy(), N_VISITS)
    sched = pd.DataFrame({
        "id": sid, "visit": visit, "target_month": target, "month": month,
        "version": np.asarray(VERSION_CYCLE, dtype=object)[(visit - 1) % 3],
    })[keep].reset_index(drop=True)
    return sched.merge(subjects[["id", "age", "edu", "APOE4"]], on="id", how="left")


@dataclass(frozen=True)
class Design:
    """Fixed part of a simulated trial: schedule, covariates and placebo means."""
    schedule: pd.DataFrame
    placebo_mean: np.ndarray
    n_subjects: int


def make_design(config: PadConfig, model: GeneratorModel = GeneratorModel(), rng=None) -> Design:
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    subjects = gen_subjects(config, rng)
    sched = gen_visits(subjects, config, rng)
    mu = model.placebo_mean(sched["month"].to_numpy() / 12.0, sched["APOE4"], sched["edu"],
                            sched["age"], sched["version"])
    return Design(sched, mu, config.n_subjects)


def treatment_effect(visit, arm, config: PadConfig) -> np.ndarray:
    """Benefit by visit number: zero through the onset visit, ``delta`` at visit 10."""
    visit = np.asarray(visit, dtype=float)
    onset = config.effect_onset_visit
    ramp = np.clip(visit - onset, 0.0, None) * config.delta / (N_VISITS - onset)
    return np.asarray(arm) * ramp


@dataclass(frozen=True)
class Replicate:
    arm: np.ndarray          # per subject
    residual: np.ndarray     # (n_subjects, 10)


def draw_replicate(design: Design, model: GeneratorModel, rng: np.random.Generator) -> Replicate:
    """Residual vectors for all ten visits and arm assignments for one trial."""
    L = np.linalg.cholesky(model.residual_cov)
    z = rng.standard_normal((design.n_subjects, N_VISITS))
    residual = z @ L.T
    arm = rng.integers(0, 2, size=design.n_subjects)
    return Replicate(arm, residual)


def gen_outcomes(design: Design, rep: Replicate, config: PadConfig, effect_on: bool) -> TrialData:
    s = design.schedule
    sid = s["id"].to_numpy()
    visit = s["visit"].to_numpy()
    arm = rep.arm[sid - 1]
    y = design.placebo_mean + rep.residual[sid - 1, visit - 1]
    if effect_on:
        y = y + treatment_effect(visit, arm, config)
    return TrialData(sid, arm, visit, s["target_month"].to_numpy(), s["month"].to_numpy(),
                     s["version"].to_numpy(), y,
                     {"APOE4": s["APOE4"].to_numpy(), "age": s["age"].to_numpy(),
                      "edu": s["edu"].to_numpy()})


def simulate_trial(config: PadConfig, rep_seed, effect_on=True, design: Design | None = None,
                   model: GeneratorModel = GeneratorModel()) -> TrialData:
    """One complete simulated trial.

    Without ``design`` the design is drawn from ``config.seed``; ``rep_seed``
    drives the arm assignment and residuals.
    """
    design = design or make_design(config, model)
    rep = draw_replicate(design, model, np.random.default_rng(rep_seed))
    return gen_outcomes(design, rep, config, effect_on)


def with_delta(config: PadConfig, delta: float) -> PadConfig:
    return replace(config, delta=delta)
