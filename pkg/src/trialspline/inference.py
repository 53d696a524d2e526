"""Marginal means, arm contrasts, Satterthwaite df and sandwich errors."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .errors import IncompatibleSpec, MissingVcov, SingularHessian, TooFewClusters
from .estimator import SINGULAR_HESSIAN, FitResult
from .meanmodel import MeanKind, design_row, visit_for_time


@dataclass(frozen=True)
class Contrast:
    estimate: float
    se: float
    df: float
    t_ratio: float
    p_value: float
    se_method: str = "model"
    time: float | None = None
    model: str = ""
    warnings: tuple = field(default=())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["warnings"] = ";".join(self.warnings)
        return d


def two_sided_p(t_ratio: float, df: float) -> float:
    if not math.isfinite(t_ratio):
        return float("nan")
    if not math.isfinite(df) or df > 1e7:
        return float(2.0 * stats.norm.sf(abs(t_ratio)))
    return float(2.0 * stats.t.sf(abs(t_ratio), df))


def _make(estimate, se, df, method, time, model, warnings=()):
    if se > 0:
        t = estimate / se
        p = two_sided_p(t, df)
    else:
        # degenerate contrast (e.g. at baseline): nothing to test
        t, p = 0.0 if estimate == 0 else math.copysign(math.inf, estimate), 1.0 if estimate == 0 else 0.0
    return Contrast(float(estimate), float(se), float(df), float(t), float(p), method, time, model,
                    tuple(warnings))


def model_label(fit: FitResult) -> str:
    return f"{fit.mean.label}:{fit.cov.kind.value}"


# reference grid ------------------------------------------------------------

def version_weights(fit: FitResult, policy: str = "equal") -> dict:
    levels = fit.mean.version_levels or ("A",)
    if policy == "equal":
        return {lv: 1.0 / len(levels) for lv in levels}
    if policy == "observed":
        if fit.model is None:
            raise MissingVcov("observed version proportions need the fitted model")
        names = fit.names[1:] if fit.mean.kind is MeanKind.PROPORTIONAL else fit.names
        w = {}
        for lv in levels[1:]:
            w[lv] = float(fit.model.X[:, names.index(f"version{lv}")].mean()) if fit.mean.version_effect else 0.0
        w[levels[0]] = 1.0 - sum(w.values())
        return w
    raise ValueError(f"unknown version policy {policy!r}")


def covariate_means(fit: FitResult) -> dict:
    if fit.model is None:
        return {c: 0.0 for c in fit.mean.covariates}
    names = fit.names[1:] if fit.mean.kind is MeanKind.PROPORTIONAL else fit.names
    return {c: float(fit.model.X[:, names.index(c)].mean()) for c in fit.mean.covariates}


def contrast_vector(fit: FitResult, at_time: float, version_policy: str = "equal") -> np.ndarray:
    """Active minus placebo design-row difference at ``at_time`` (linear kinds)."""
    if fit.mean.kind is MeanKind.PROPORTIONAL:
        raise IncompatibleSpec("the proportional model has no linear contrast vector")
    ver = version_weights(fit, version_policy)
    cov = covariate_means(fit)
    return design_row(fit.mean, 1, at_time, cov, ver) - design_row(fit.mean, 0, at_time, cov, ver)


# Satterthwaite -----------------------------------------------------------

def _cov_hessian_inverse(fit: FitResult, h=1e-5):
    """Inverse observed information of the covariance parameters (profiled)."""
    if "A" in fit._cache:
        return fit._cache["A"]
    model, phi = fit.model, fit.phi
    n = len(phi)
    H = np.empty((n, n))
    for a in range(n):
        e = np.zeros(n)
        e[a] = h
        H[:, a] = (model.evaluate(phi + e)[1] - model.evaluate(phi - e)[1]) / (2 * h)
    info = -0.5 * (H + H.T)
    w = np.linalg.eigvalsh(info)
    if not np.all(np.isfinite(w)) or w.min() <= n * np.finfo(float).eps * abs(w).max() * 1e3:
        fit._cache["A"] = None
        return None
    fit._cache["A"] = np.linalg.inv(info)
    return fit._cache["A"]


def satterthwaite_df(fit: FitResult, c, h=1e-5) -> float:
    """Satterthwaite degrees of freedom for the contrast ``c @ beta``.

    Falls back to ``n_obs - p`` (with a SingularHessian warning appended to
    ``fit.warnings``) when the covariance-parameter information is singular.
    """
    c = np.asarray(c, dtype=float)
    fallback = float(fit.n_obs - len(fit.beta))
    if fit.mean.kind is MeanKind.PROPORTIONAL:
        return fallback
    if fit.model is None:
        raise MissingVcov("fit carries no likelihood model")
    A = _cov_hessian_inverse(fit)
    if A is None:
        msg = f"{SINGULAR_HESSIAN}: covariance-parameter information not invertible"
        if msg not in fit.warnings:
            fit.warnings.append(msg)
        return fallback
    model, phi = fit.model, fit.phi
    g0 = float(c @ fit.vcov_beta @ c)
    if g0 <= 0:
        return fallback
    grad = np.empty(len(phi))
    for a in range(len(phi)):
        e = np.zeros(len(phi))
        e[a] = h
        grad[a] = (c @ model.vcov_beta(phi + e) @ c - c @ model.vcov_beta(phi - e) @ c) / (2 * h)
    denom = float(grad @ A @ grad)
    if denom <= 0 or not math.isfinite(denom):
        return math.inf
    return 2.0 * g0 * g0 / denom


# sandwich ----------------------------------------------------------------

def sandwich_vcov(fit: FitResult, data=None) -> np.ndarray:
    """Cluster-robust (CR1) fixed-effect covariance with subjects as clusters."""
    if fit.model is None:
        raise MissingVcov("fit carries no likelihood model")
    if fit.mean.kind is MeanKind.PROPORTIONAL:
        raise IncompatibleSpec("sandwich errors are implemented for linear mean structures")
    g = fit.n_subjects
    if g < 2:
        raise TooFewClusters(f"need at least 2 subjects, have {g}")
    p = len(fit.beta)
    B = np.zeros((p, p))
    M = np.zeros((p, p))
    for Xi, Wi, ri, _ in fit.model.subject_terms(fit.phi):
        WX = Wi @ Xi
        B += Xi.T @ WX
        s = WX.T @ ri
        M += np.outer(s, s)
    Binv = np.linalg.inv(B)
    V = Binv @ M @ Binv * (g / (g - 1.0))
    return 0.5 * (V + V.T)


# contrasts -----------------------------------------------------------------

def _proportional_gradient(fit: FitResult, at_time: float):
    spec = fit.mean
    visit = visit_for_time(spec, at_time)
    theta = fit.beta[0]
    steps = fit.beta[2:2 + spec.K - 1]
    s = steps[:visit - 1].sum()
    est = s * (math.exp(theta) - 1.0)
    grad = np.zeros(len(fit.beta))
    grad[0] = s * math.exp(theta)
    grad[2:2 + visit - 1] = math.exp(theta) - 1.0
    return est, grad


def emm_contrast(fit: FitResult, at_time: float, version_policy: str = "equal",
                 se_method: str = "model", data=None, df_method: str = "satterthwaite") -> Contrast:
    """Active minus placebo marginal mean at ``at_time``."""
    if fit.vcov_beta is None:
        raise MissingVcov("fit has no fixed-effect covariance")
    label = model_label(fit)
    if fit.mean.kind is MeanKind.PROPORTIONAL:
        est, grad = _proportional_gradient(fit, at_time)
        se = math.sqrt(max(float(grad @ fit.vcov_beta @ grad), 0.0))
        return _make(est, se, fit.n_obs - len(fit.beta), "model", at_time, label, fit.warnings)
    c = contrast_vector(fit, at_time, version_policy)
    est = float(c @ fit.beta)
    if se_method == "model":
        V = fit.vcov_beta
    elif se_method == "sandwich":
        V = sandwich_vcov(fit, data)
    else:
        raise ValueError(f"unknown se_method {se_method!r}")
    var = float(c @ V @ c)
    se = math.sqrt(var) if var > 0 else 0.0
    if se <= 1e-12 * (1.0 + abs(est)):
        return _make(est, 0.0, math.inf, se_method, at_time, label, fit.warnings)
    if df_method == "satterthwaite":
        df = satterthwaite_df(fit, c)
    elif df_method == "residual":
        df = float(fit.n_obs - len(fit.beta))
    else:
        raise ValueError(f"unknown df_method {df_method!r}")
    return _make(est, se, df, se_method, at_time, label, fit.warnings)


def wald_theta(fit: FitResult) -> Contrast:
    """Wald t-test of the proportional treatment parameter theta."""
    if fit.mean.kind is not MeanKind.PROPORTIONAL:
        raise IncompatibleSpec("wald_theta needs a proportional-model fit")
    if fit.vcov_beta is None:
        raise MissingVcov("fit has no fixed-effect covariance")
    est = float(fit.beta[0])
    se = math.sqrt(float(fit.vcov_beta[0, 0]))
    return _make(est, se, fit.n_obs - len(fit.beta), "model", None, model_label(fit), fit.warnings)


def mean_curve(fit: FitResult, times, version_policy: str = "equal") -> list[dict]:
    """Model mean and standard error per arm at each time (delta method)."""
    ver = version_weights(fit, version_policy)
    cov = covariate_means(fit)
    rows = []
    for t in times:
        for arm in (0, 1):
            if fit.mean.kind is MeanKind.PROPORTIONAL:
                x = design_row(fit.mean, arm, t, cov, ver)
                theta, rest = fit.beta[0], fit.beta[1:]
                k = fit.mean.K
                xs = x.copy()
                xs[1:k] *= math.exp(theta * arm)
                est = float(xs @ rest)
                grad = np.r_[arm * float(xs[1:k] @ rest[1:k]), xs]
            else:
                grad = design_row(fit.mean, arm, t, cov, ver)
                est = float(grad @ fit.beta)
            if fit.vcov_beta is None:
                se = math.nan
            else:
                se = math.sqrt(max(float(grad @ fit.vcov_beta @ grad), 0.0))
            rows.append({"model": model_label(fit), "arm": arm, "time": float(t),
                         "estimate": est, "se": se})
    return rows


def contrast_curve(fit: FitResult, times, version_policy: str = "equal") -> list[Contrast]:
    return [emm_contrast(fit, t, version_policy) for t in times]
