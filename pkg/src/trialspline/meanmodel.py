"""Fixed-effects design for the four temporal mean structures.

All structures share the constrained-baseline (cLDA) convention: there is no
arm main effect, so both arms have the same mean at baseline and the
treatment difference is carried entirely by arm-by-time columns.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .errors import DegenerateTimes, IncompatibleSpec, UnscheduledTime
from .ncs_basis import SplineBasis, make_basis

INTERCEPT = "(Intercept)"


class MeanKind(str, enum.Enum):
    CATEGORICAL = "cat"
    LINEAR = "linear"
    SPLINE = "ncs"
    PROPORTIONAL = "prop"


@dataclass(frozen=True)
class MeanSpec:
    kind: MeanKind
    K: int | None = None
    df: int | None = None
    covariates: tuple[str, ...] = ()
    version_effect: bool = False
    clda_constraint: bool = True
    # filled in by bind()
    basis: SplineBasis | None = None
    version_levels: tuple[str, ...] | None = None
    schedule: tuple[tuple[int, float], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", MeanKind(self.kind))
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.kind in (MeanKind.CATEGORICAL, MeanKind.PROPORTIONAL) and (self.K is None or self.K < 2):
            raise IncompatibleSpec(f"{self.kind.value} needs K >= 2 scheduled visits")
        if self.kind is MeanKind.SPLINE and (self.df is None or self.df < 1):
            raise IncompatibleSpec("spline mean needs df >= 1")
        if not self.clda_constraint:
            raise IncompatibleSpec("only the constrained-baseline parameterization is supported")

    @property
    def bound(self) -> bool:
        return self.version_levels is not None and (self.kind is not MeanKind.SPLINE or self.basis is not None)

    @property
    def label(self) -> str:
        base = {MeanKind.CATEGORICAL: "cat", MeanKind.LINEAR: "linear",
                MeanKind.SPLINE: f"ncs:{self.df}", MeanKind.PROPORTIONAL: "prop"}[self.kind]
        return base + ("+version" if self.version_effect else "")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value, "K": self.K, "df": self.df,
            "covariates": list(self.covariates), "version_effect": self.version_effect,
            "basis": self.basis.to_dict() if self.basis is not None else None,
            "version_levels": list(self.version_levels) if self.version_levels else None,
            "schedule": [list(s) for s in self.schedule] if self.schedule else None,
        }

    @classmethod
    def from_dict(cls, d) -> "MeanSpec":
        return cls(
            kind=d["kind"], K=d.get("K"), df=d.get("df"), covariates=tuple(d.get("covariates", ())),
            version_effect=d.get("version_effect", False),
            basis=SplineBasis.from_dict(d["basis"]) if d.get("basis") else None,
            version_levels=tuple(d["version_levels"]) if d.get("version_levels") else None,
            schedule=tuple((int(v), float(t)) for v, t in d["schedule"]) if d.get("schedule") else None,
        )


def bind(spec: MeanSpec, data) -> MeanSpec:
    """Freeze data-dependent pieces (spline knots, version levels, schedule)."""
    if spec.bound:
        return spec
    for c in spec.covariates:
        if c not in data.covariate_names:
            raise IncompatibleSpec(f"covariate {c!r} not in data")
    visit = np.asarray(data.visit)
    if spec.kind in (MeanKind.CATEGORICAL, MeanKind.PROPORTIONAL) and visit.max() > spec.K:
        raise IncompatibleSpec(f"data has visit {visit.max()} > K={spec.K}")
    basis = spec.basis
    if spec.kind is MeanKind.SPLINE and basis is None:
        try:
            basis = make_basis(data.month, spec.df)
        except DegenerateTimes as exc:
            raise IncompatibleSpec(str(exc)) from exc
    levels = tuple(sorted(set(data.version)))
    schedule = []
    target = np.asarray(data.target_month)
    for v in np.unique(visit):
        vals, counts = np.unique(target[visit == v], return_counts=True)
        schedule.append((int(v), float(vals[np.argmax(counts)])))
    return replace(spec, basis=basis, version_levels=levels, schedule=tuple(schedule))


def coefficient_names(spec: MeanSpec) -> list[str]:
    names = [INTERCEPT]
    if spec.kind is MeanKind.CATEGORICAL:
        vis = [f"visit{j}" for j in range(2, spec.K + 1)]
        names += vis + [f"arm:{v}" for v in vis]
    elif spec.kind is MeanKind.LINEAR:
        names += ["month", "arm:month"]
    elif spec.kind is MeanKind.SPLINE:
        ns = [f"ns{k}" for k in range(1, spec.basis.m + 1)]
        names += ns + [f"arm:{b}" for b in ns]
    else:
        names += [f"step{j}" for j in range(2, spec.K + 1)]
    names += list(spec.covariates)
    if spec.version_effect:
        names += [f"version{lv}" for lv in spec.version_levels[1:]]
    return names


def _version_block(spec, version, n):
    levels = spec.version_levels[1:]
    out = np.zeros((n, len(levels)))
    if isinstance(version, Mapping):
        for j, lv in enumerate(levels):
            out[:, j] = float(version.get(lv, 0.0))
    else:
        version = np.broadcast_to(np.asarray(version, dtype=object), (n,))
        for j, lv in enumerate(levels):
            out[:, j] = version == lv
    return out


def _time_block(spec, arm, visit, month):
    """Columns after the intercept and before covariates."""
    arm = np.asarray(arm, dtype=float)[:, None]
    if spec.kind in (MeanKind.CATEGORICAL, MeanKind.PROPORTIONAL):
        ind = (np.asarray(visit)[:, None] == np.arange(2, spec.K + 1)[None, :]).astype(float)
        if spec.kind is MeanKind.PROPORTIONAL:
            # cumulative steps: mean at visit j is the sum of step2..stepj
            return (np.asarray(visit)[:, None] >= np.arange(2, spec.K + 1)[None, :]).astype(float)
        return np.hstack([ind, arm * ind])
    month = np.asarray(month, dtype=float)
    if spec.kind is MeanKind.LINEAR:
        return np.column_stack([month, arm[:, 0] * month])
    b = spec.basis(month)
    # arm difference is measured from time zero so that it vanishes at baseline
    b0 = spec.basis(np.array([0.0]))
    return np.hstack([b, arm * (b - b0)])


def design_matrix(spec: MeanSpec, arm, visit, month, covariates: Mapping[str, np.ndarray], version):
    n = len(arm)
    cols = [np.ones((n, 1)), _time_block(spec, arm, visit, month)]
    if spec.covariates:
        cols.append(np.column_stack([np.broadcast_to(np.asarray(covariates[c], dtype=float), (n,))
                                     for c in spec.covariates]))
    if spec.version_effect:
        cols.append(_version_block(spec, version, n))
    return np.hstack(cols)


def build_design(spec: MeanSpec, data):
    """Design matrix (rows in ``data`` order) and coefficient names.

    For the proportional model the returned design is the placebo
    cumulative-step design; the fitter rescales the step columns for the
    active arm.
    """
    spec = bind(spec, data)
    X = design_matrix(spec, data.arm, data.visit, data.month,
                      {c: data.covariate(c) for c in spec.covariates}, data.version)
    return X, coefficient_names(spec)


def visit_for_time(spec: MeanSpec, t: float) -> int:
    for v, target in spec.schedule:
        if abs(target - t) <= 1e-9 * max(1.0, abs(t)):
            return v
    raise UnscheduledTime(f"month {t} is not a scheduled target month "
                          f"({[s[1] for s in spec.schedule]})")


def design_row(spec: MeanSpec, arm: int, t: float, covariates: Mapping[str, float] | None = None,
               version="A") -> np.ndarray:
    if not spec.bound:
        raise IncompatibleSpec("spec must be bound to data first")
    visit = visit_for_time(spec, t) if spec.kind in (MeanKind.CATEGORICAL, MeanKind.PROPORTIONAL) else 1
    covariates = covariates or {}
    cov = {c: np.array([covariates.get(c, 0.0)]) for c in spec.covariates}
    if isinstance(version, str) and spec.version_effect and version not in spec.version_levels:
        raise ValueError(f"unknown version level {version!r}")
    ver = version if isinstance(version, Mapping) else np.array([version], dtype=object)
    return design_matrix(spec, np.array([arm]), np.array([visit]), np.array([float(t)]), cov, ver)[0]


def predict_mean(spec: MeanSpec, beta, arm: int, t: float, covariates=None, version="A") -> float:
    """Model mean at one point. For the proportional model ``beta[0]`` is theta."""
    beta = np.asarray(beta, dtype=float)
    if spec.kind is MeanKind.PROPORTIONAL:
        theta, rest = beta[0], beta[1:]
        row = design_row(spec, arm, t, covariates, version)
        row[1:spec.K] *= np.exp(theta * arm)
        return float(row @ rest)
    return float(design_row(spec, arm, t, covariates, version) @ beta)
