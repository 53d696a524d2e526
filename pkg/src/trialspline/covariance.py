"""Within-subject variance-covariance structures.

Every structure maps an unconstrained real vector ("raw" optimizer
coordinates) to a positive-definite covariance matrix for each subject.
Structures indexed by visit number (unstructured, heterogeneous AR(1)) and
those that only depend on the number of visits (random intercept, iid) are
"pattern" kinds: subjects that share a visit pattern share one matrix. The
continuous-time kinds build one matrix per subject from the actual months.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit, logit

from .errors import IncompatibleSpec, VisitOutOfRange


class CovKind(str, enum.Enum):
    UNSTRUCTURED = "un"
    HET_AR1 = "har1"
    CAR1_CONST_PROP = "car1cp"
    CAR1_EXP = "car1exp"
    RANDOM_INTERCEPT = "ri"
    RANDOM_SLOPE = "rs"
    INDEPENDENT = "iid"


_LABELS = {
    CovKind.UNSTRUCTURED: "Unstructured",
    CovKind.HET_AR1: "AR1 Het.",
    CovKind.CAR1_CONST_PROP: "CAR1 Const. Prop.",
    CovKind.CAR1_EXP: "CAR1 Exp.",
    CovKind.RANDOM_INTERCEPT: "Random Intercept",
    CovKind.RANDOM_SLOPE: "Random Slope",
    CovKind.INDEPENDENT: "Independent",
}


@dataclass(frozen=True)
class CovSpec:
    kind: CovKind
    K: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", CovKind(self.kind))
        if self.kind in (CovKind.UNSTRUCTURED, CovKind.HET_AR1):
            if self.K is None or self.K < 1:
                raise IncompatibleSpec(f"{self.kind.value} needs the number of visits K")

    @property
    def label(self):
        return _LABELS[self.kind]

    @property
    def n_params(self) -> int:
        k = self.kind
        if k is CovKind.UNSTRUCTURED:
            return self.K * (self.K + 1) // 2
        if k is CovKind.HET_AR1:
            return self.K + 1
        return {CovKind.CAR1_CONST_PROP: 3, CovKind.CAR1_EXP: 3,
                CovKind.RANDOM_INTERCEPT: 2, CovKind.RANDOM_SLOPE: 4,
                CovKind.INDEPENDENT: 1}[k]

    @property
    def time_dependent(self) -> bool:
        return self.kind in (CovKind.CAR1_CONST_PROP, CovKind.CAR1_EXP, CovKind.RANDOM_SLOPE)

    @property
    def by_visit(self) -> bool:
        return self.kind in (CovKind.UNSTRUCTURED, CovKind.HET_AR1)

    def to_dict(self):
        return {"kind": self.kind.value, "K": self.K}


@dataclass(frozen=True)
class CovParams:
    spec: CovSpec
    raw: np.ndarray

    def __post_init__(self):
        raw = np.array(self.raw, dtype=float).ravel()
        if raw.shape != (self.spec.n_params,):
            raise ValueError(f"expected {self.spec.n_params} raw parameters, got {raw.size}")
        raw.setflags(write=False)
        object.__setattr__(self, "raw", raw)

    @property
    def values(self) -> dict:
        return transform(self.spec, self.raw)


# parameter maps ----------------------------------------------------------

def _sym_logistic(r):
    return 2.0 * expit(r) - 1.0


def _sym_logit(x):
    return logit((np.asarray(x) + 1.0) / 2.0)


def _chol_from_raw(raw, k):
    L = np.zeros((k, k))
    L[np.tril_indices(k)] = raw
    d = np.diag_indices(k)
    L[d] = np.exp(L[d])
    return L


def _raw_from_chol(L):
    L = np.array(L, dtype=float)
    d = np.diag_indices(L.shape[0])
    L[d] = np.log(L[d])
    return L[np.tril_indices(L.shape[0])]


def transform(spec: CovSpec, raw) -> dict:
    """Constrained parameter values for a raw vector."""
    raw = np.asarray(raw, dtype=float)
    k = spec.kind
    if k is CovKind.UNSTRUCTURED:
        L = _chol_from_raw(raw, spec.K)
        cov = L @ L.T
        sd = np.sqrt(np.diag(cov))
        return {"cov": cov, "sd": sd, "corr": cov / np.outer(sd, sd)}
    if k is CovKind.HET_AR1:
        return {"sd": np.exp(raw[:-1]), "rho": float(_sym_logistic(raw[-1]))}
    if k is CovKind.CAR1_CONST_PROP:
        return {"rho": float(expit(raw[0])), "a": float(np.exp(raw[1])), "b": float(np.exp(raw[2]))}
    if k is CovKind.CAR1_EXP:
        return {"rho": float(expit(raw[0])), "sigma": float(np.exp(raw[1])), "delta": float(raw[2])}
    if k is CovKind.RANDOM_INTERCEPT:
        return {"sd_intercept": float(np.exp(raw[0])), "sigma": float(np.exp(raw[1]))}
    if k is CovKind.RANDOM_SLOPE:
        L = _chol_from_raw(raw[:3], 2)
        G = L @ L.T
        sds = np.sqrt(np.diag(G))
        return {"sd_intercept": float(sds[0]), "sd_slope": float(sds[1]),
                "corr": float(G[0, 1] / (sds[0] * sds[1])), "sigma": float(np.exp(raw[3])),
                "G": G}
    if k is CovKind.INDEPENDENT:
        return {"sigma": float(np.exp(raw[0]))}
    raise AssertionError(k)


def untransform(spec: CovSpec, values: dict) -> np.ndarray:
    """Inverse of :func:`transform` (accepts the keys it produces)."""
    k = spec.kind
    if k is CovKind.UNSTRUCTURED:
        return _raw_from_chol(np.linalg.cholesky(np.asarray(values["cov"], dtype=float)))
    if k is CovKind.HET_AR1:
        return np.r_[np.log(values["sd"]), _sym_logit(values["rho"])]
    if k is CovKind.CAR1_CONST_PROP:
        return np.array([logit(values["rho"]), np.log(values["a"]), np.log(values["b"])])
    if k is CovKind.CAR1_EXP:
        return np.array([logit(values["rho"]), np.log(values["sigma"]), values["delta"]])
    if k is CovKind.RANDOM_INTERCEPT:
        return np.log([values["sd_intercept"], values["sigma"]])
    if k is CovKind.RANDOM_SLOPE:
        if "G" in values:
            G = np.asarray(values["G"], dtype=float)
        else:
            s0, s1, r = values["sd_intercept"], values["sd_slope"], values["corr"]
            G = np.array([[s0 * s0, r * s0 * s1], [r * s0 * s1, s1 * s1]])
        return np.r_[_raw_from_chol(np.linalg.cholesky(G)), np.log(values["sigma"])]
    if k is CovKind.INDEPENDENT:
        return np.log([values["sigma"]])
    raise AssertionError(k)


# matrices ----------------------------------------------------------------

def full_cov(spec: CovSpec, raw, size: int) -> np.ndarray:
    """Covariance over the full pattern index set of a pattern kind.

    For visit-indexed kinds ``size`` is ignored and the K x K matrix over all
    scheduled visits is returned; for random intercept / iid it is the
    ``size`` x ``size`` matrix for a subject with that many observations.
    """
    raw = np.asarray(raw, dtype=float)
    k = spec.kind
    if k is CovKind.UNSTRUCTURED:
        L = _chol_from_raw(raw, spec.K)
        return L @ L.T
    if k is CovKind.HET_AR1:
        sd = np.exp(raw[:-1])
        rho = _sym_logistic(raw[-1])
        lag = np.abs(np.subtract.outer(np.arange(spec.K), np.arange(spec.K)))
        return np.outer(sd, sd) * rho ** lag
    if k is CovKind.RANDOM_INTERCEPT:
        sa2, s2 = np.exp(2 * raw)
        return sa2 + s2 * np.eye(size)
    if k is CovKind.INDEPENDENT:
        return np.exp(2 * raw[0]) * np.eye(size)
    raise ValueError(f"{k.value} is not a pattern kind")


def pattern_index(spec: CovSpec, visit_nos: Sequence[int]) -> np.ndarray:
    visit_nos = np.asarray(visit_nos, dtype=int)
    if spec.by_visit:
        if visit_nos.min() < 1 or visit_nos.max() > spec.K:
            raise VisitOutOfRange(f"visits {visit_nos.tolist()} outside 1..{spec.K}")
        return visit_nos - 1
    return np.arange(len(visit_nos))


def time_cov(spec: CovSpec, raw, months) -> np.ndarray:
    """Batched covariance for continuous-time kinds; ``months`` is (m, n)."""
    raw = np.asarray(raw, dtype=float)
    t = np.asarray(months, dtype=float)
    k = spec.kind
    if k in (CovKind.CAR1_CONST_PROP, CovKind.CAR1_EXP):
        log_rho = -np.logaddexp(0.0, -raw[0])
        corr = np.exp(log_rho * np.abs(t[:, :, None] - t[:, None, :]))
        if k is CovKind.CAR1_CONST_PROP:
            sd = np.sqrt(np.exp(2 * raw[1]) + np.exp(2 * raw[2]) * t * t)
        else:
            sd = np.exp(raw[1] + raw[2] * t)
        return corr * sd[:, :, None] * sd[:, None, :]
    if k is CovKind.RANDOM_SLOPE:
        L = _chol_from_raw(raw[:3], 2)
        G = L @ L.T
        s2 = np.exp(2 * raw[3])
        out = G[0, 0] + G[0, 1] * (t[:, :, None] + t[:, None, :]) + G[1, 1] * t[:, :, None] * t[:, None, :]
        n = t.shape[1]
        return out + s2 * np.eye(n)
    raise ValueError(f"{k.value} is not a continuous-time kind")


def subject_cov(params: CovParams, visits: Sequence[tuple[int, float]]) -> np.ndarray:
    """Covariance matrix for one subject observed at ``(visit_no, month)`` pairs."""
    spec = params.spec
    if len(visits) == 0:
        raise ValueError("visits must be non-empty")
    visit_nos = np.array([v for v, _ in visits], dtype=int)
    months = np.array([t for _, t in visits], dtype=float)
    if spec.time_dependent:
        if (months < 0).any():
            raise ValueError("months must be >= 0")
        return time_cov(spec, params.raw, months[None, :])[0]
    idx = pattern_index(spec, visit_nos)
    full = full_cov(spec, params.raw, len(visit_nos))
    return full[np.ix_(idx, idx)]


# starting values ---------------------------------------------------------

START_CORR = 0.3


def init_params(spec: CovSpec, data, residuals=None) -> CovParams:
    """Moment-based starting values.

    ``residuals`` (aligned with the rows of ``data``) should come from an OLS
    pre-fit of the mean model; when omitted, outcomes centred at their
    per-visit means are used. Missing outcomes are ignored.
    """
    visit = np.asarray(data.visit)
    month = np.asarray(data.month)
    if residuals is None:
        y = np.asarray(data.y, dtype=float)
        residuals = np.full_like(y, np.nan)
        for v in np.unique(visit):
            sel = (visit == v) & ~np.isnan(y)
            if sel.any():
                residuals[sel] = y[sel] - y[sel].mean()
    r = np.asarray(residuals, dtype=float)
    ok = ~np.isnan(r)
    if ok.sum() < 2:
        raise ValueError("need at least two observations")
    r, visit, month = r[ok], visit[ok], month[ok]
    s2 = float(np.var(r, ddof=1)) if ok.sum() > 1 else 1.0
    s2 = max(s2, 1e-8)
    rho = START_CORR
    k = spec.kind

    if spec.by_visit:
        var = np.full(spec.K, s2)
        for j in range(spec.K):
            sel = visit == j + 1
            if sel.sum() >= 2:
                var[j] = max(np.var(r[sel], ddof=1), 1e-8 * s2)
        sd = np.sqrt(var)
        if k is CovKind.UNSTRUCTURED:
            corr = np.full((spec.K, spec.K), rho)
            np.fill_diagonal(corr, 1.0)
            return CovParams(spec, untransform(spec, {"cov": corr * np.outer(sd, sd)}))
        return CovParams(spec, untransform(spec, {"sd": sd, "rho": rho}))
    if k is CovKind.RANDOM_INTERCEPT:
        return CovParams(spec, untransform(spec, {"sd_intercept": np.sqrt(rho * s2),
                                                  "sigma": np.sqrt((1 - rho) * s2)}))
    if k is CovKind.INDEPENDENT:
        return CovParams(spec, untransform(spec, {"sigma": np.sqrt(s2)}))

    span = float(month.max() - month.min()) or 1.0
    gap = _typical_gap(data)
    if k is CovKind.CAR1_EXP:
        return CovParams(spec, untransform(spec, {"rho": rho ** (1.0 / gap),
                                                  "sigma": np.sqrt(s2), "delta": 0.0}))
    if k is CovKind.CAR1_CONST_PROP:
        return CovParams(spec, untransform(spec, {"rho": rho ** (1.0 / gap), "a": np.sqrt(s2),
                                                  "b": 0.1 * np.sqrt(s2) / span}))
    if k is CovKind.RANDOM_SLOPE:
        return CovParams(spec, untransform(spec, {
            "sd_intercept": np.sqrt(rho * s2), "sd_slope": np.sqrt(rho * s2) / span,
            "corr": 0.0, "sigma": np.sqrt((1 - rho) * s2)}))
    raise AssertionError(k)


def _typical_gap(data) -> float:
    code = np.asarray(data.subject_code)
    month = np.asarray(data.month)
    same = np.diff(code) == 0
    gaps = np.diff(month)[same]
    gaps = gaps[gaps > 0]
    return float(np.median(gaps)) if gaps.size else 1.0
