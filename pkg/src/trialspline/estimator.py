"""Maximum-likelihood fitting of the mean/covariance models.

The fixed effects are profiled out: for any covariance parameter vector the
GLS estimate of beta is available in closed form, so the optimizer only sees
the covariance parameters (plus theta for the proportional model).

Subjects are grouped so that each likelihood evaluation is cheap:

* pattern kinds (covariance depends on the visit pattern only) keep
  per-pattern cross-product sums, making one evaluation independent of the
  number of subjects;
* continuous-time kinds stack the subjects of equal size and factor their
  matrices in one batched call.

Gradients of the profiled log-likelihood are exact: by the envelope theorem
they equal the partial derivative at beta-hat, which reduces to contracting
``dl/dSigma_i = -1/2 (W_i - W_i r_i r_i' W_i)`` with the derivative of each
structure with respect to its raw parameters.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .covariance import (CovKind, CovParams, CovSpec, _chol_from_raw, _sym_logistic, full_cov,
                         init_params, pattern_index, time_cov, transform)
from .dataset import TrialData, complete_cases
from .errors import IncompatibleSpec, SingularDesign, SingularHessian
from .meanmodel import MeanKind, MeanSpec, bind, build_design, coefficient_names

LOG2PI = math.log(2.0 * math.pi)

NON_CONVERGENCE = "NonConvergence"
SINGULAR_HESSIAN = "SingularHessian"
BOUNDARY_ESTIMATE = "BoundaryEstimate"


@dataclass(frozen=True)
class FitOptions:
    gtol: float = 1e-5          # gradient norm on the log-likelihood scale
    ftol: float = 1e-10         # relative log-likelihood change
    max_iter: int = 500
    restarts: int = 4          # extra attempts after a stalled line search


# ---------------------------------------------------------------------------
# grouped likelihood
# ---------------------------------------------------------------------------

class _PatternGroup:
    __slots__ = ("idx", "rows", "arm", "m", "Sxx", "Sxy", "Syy")

    def __init__(self, idx, rows, arm, X, y):
        self.idx = idx
        self.rows = rows                     # (m, n) row indices into the data
        self.arm = arm
        self.m = rows.shape[0]
        Xg, yg = X[rows], y[rows]            # (m, n, p), (m, n)
        self.Sxx = np.einsum("mja,mkb->jkab", Xg, Xg, optimize=True)
        self.Sxy = np.einsum("mja,mk->jka", Xg, yg, optimize=True)
        self.Syy = yg.T @ yg


class _TimeGroup:
    __slots__ = ("rows", "arm", "m", "X", "y", "t")

    def __init__(self, rows, arm, X, y, t):
        self.rows = rows
        self.arm = arm
        self.m = rows.shape[0]
        self.X, self.y, self.t = X[rows], y[rows], t[rows]


class ProfileLikelihood:
    """Gaussian log-likelihood with beta profiled out.

    ``scale_cols`` switches on the proportional model: for active subjects the
    listed design columns are multiplied by ``exp(theta)``, and theta is the
    last entry of the parameter vector.
    """

    def __init__(self, X, y, data: TrialData, cov: CovSpec, scale_cols=None):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.cov = cov
        self.n_obs, self.p = self.X.shape
        self.scale_cols = None if scale_cols is None else np.asarray(scale_cols, dtype=bool)
        self.n_cov = cov.n_params
        self.n_par = self.n_cov + (self.scale_cols is not None)
        if self.scale_cols is not None and cov.time_dependent:
            raise IncompatibleSpec("proportional model needs a pattern covariance kind")

        code = np.asarray(data.subject_code)
        starts = np.flatnonzero(np.r_[True, np.diff(code) != 0])
        ends = np.r_[starts[1:], len(code)]
        visit = np.asarray(data.visit)
        arm = np.asarray(data.arm)
        self.n_subjects = len(starts)
        self.subject_rows = [np.arange(s, e) for s, e in zip(starts, ends)]
        self.subject_arm = [int(arm[s]) for s in starts]
        self.subject_idx = [None if cov.time_dependent else pattern_index(cov, visit[s:e])
                            for s, e in zip(starts, ends)]

        use_arm = self.scale_cols is not None
        buckets: dict = {}
        for s, e in zip(starts, ends):
            a = int(arm[s]) if use_arm else 0
            if cov.time_dependent:
                key = (e - s, a)
            else:
                key = (tuple(pattern_index(cov, visit[s:e])), a)
            buckets.setdefault(key, []).append(np.arange(s, e))
        self.groups = []
        for key in sorted(buckets):
            rows = np.vstack(buckets[key])
            if cov.time_dependent:
                self.groups.append(_TimeGroup(rows, key[1], self.X, self.y, np.asarray(data.month)))
            else:
                self.groups.append(_PatternGroup(np.array(key[0]), rows, key[1], self.X, self.y))
        self.full_size = 1 + max((int(g.idx.max()) for g in self.groups), default=0) \
            if not cov.time_dependent else None
        self.months = np.asarray(data.month)

    # -- helpers ----------------------------------------------------------
    def _split(self, phi):
        phi = np.asarray(phi, dtype=float)
        if self.scale_cols is None:
            return phi, 0.0
        return phi[:-1], float(phi[-1])

    def _scale(self, theta, arm):
        d = np.ones(self.p)
        if self.scale_cols is not None and arm == 1:
            d[self.scale_cols] = math.exp(theta)
        return d

    def _pattern_covs(self, raw):
        if self.cov.by_visit:
            full = full_cov(self.cov, raw, self.cov.K)
        else:
            full = full_cov(self.cov, raw, self.full_size)
        return full

    # -- core evaluation --------------------------------------------------
    def evaluate(self, phi, need_grad=True):
        """Return ``(loglik, grad, state)``; grad is None when not requested."""
        raw, theta = self._split(phi)
        p = self.p
        XtWX = np.zeros((p, p))
        XtWy = np.zeros(p)
        yWy = 0.0
        logdet = 0.0
        cache = []
        if self.cov.time_dependent:
            for g in self.groups:
                S = time_cov(self.cov, raw, g.t)
                L = np.linalg.cholesky(S)
                logdet += 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum()
                W = np.linalg.inv(S)
                WX = W @ g.X
                Wy = np.einsum("mjk,mk->mj", W, g.y)
                XtWX += np.tensordot(g.X, WX, axes=([0, 1], [0, 1]))
                XtWy += np.tensordot(g.X, Wy, axes=([0, 1], [0, 1]))
                yWy += float(np.sum(g.y * Wy))
                cache.append(W)
        else:
            full = self._pattern_covs(raw)
            for g in self.groups:
                S = full[np.ix_(g.idx, g.idx)]
                L = np.linalg.cholesky(S)
                logdet += g.m * 2.0 * np.log(np.diag(L)).sum()
                W = linalg.cho_solve((L, True), np.eye(len(g.idx)))
                d = self._scale(theta, g.arm)
                XtWX += np.tensordot(W, g.Sxx, axes=([0, 1], [0, 1])) * np.outer(d, d)
                XtWy += np.tensordot(W, g.Sxy, axes=([0, 1], [0, 1])) * d
                yWy += float(np.sum(W * g.Syy))
                cache.append(W)
        try:
            cf = linalg.cho_factor(XtWX)
        except linalg.LinAlgError:
            raise SingularDesign("GLS normal equations are singular") from None
        beta = linalg.cho_solve(cf, XtWy)
        quad = yWy - beta @ XtWy
        ll = -0.5 * (logdet + quad + self.n_obs * LOG2PI)
        state = {"beta": beta, "XtWX": XtWX, "cf": cf, "W": cache, "raw": raw, "theta": theta}
        if not need_grad:
            return ll, None, state
        return ll, self._gradient(raw, theta, beta, cache), state

    def _gradient(self, raw, theta, beta, cache):
        cov = self.cov
        grad = np.zeros(self.n_par)
        if cov.time_dependent:
            parts = []
            for g, W in zip(self.groups, cache):
                r = g.y - np.einsum("mja,a->mj", g.X, beta)
                u = np.einsum("mjk,mk->mj", W, r)
                A = -0.5 * (W - u[:, :, None] * u[:, None, :])
                parts.append(_time_grad(cov, raw, g.t, A))
            grad[:self.n_cov] = np.sum(parts, axis=0)
            return grad

        size = cov.K if cov.by_visit else self.full_size
        A_full = np.zeros((size, size))
        dtheta = 0.0
        for g, W in zip(self.groups, cache):
            d = self._scale(theta, g.arm)
            bd = beta * d
            P = g.Sxy @ bd                                  # [j,k] = sum_i x_ij.b y_ik
            Q = np.einsum("jkab,a,b->jk", g.Sxx, bd, bd, optimize=True)
            R = g.Syy - P - P.T + Q
            A = -0.5 * (g.m * W - W @ R @ W)
            A_full[np.ix_(g.idx, g.idx)] += A
            if self.scale_cols is not None and g.arm == 1:
                dd = np.where(self.scale_cols, d, 0.0) * beta    # derivative of scaled beta
                # sum_i (x_i dd)' W (y_i - x_i bd)
                C = (g.Sxy @ dd) - np.einsum("jkab,a,b->jk", g.Sxx, dd, bd, optimize=True)
                dtheta += float(np.sum(W * C))
        grad[:self.n_cov] = _pattern_grad(cov, raw, A_full)
        if self.scale_cols is not None:
            grad[-1] = dtheta
        return grad

    def expected_information(self, raw, h=1e-6):
        """Fisher information of the covariance parameters (pattern kinds only)."""
        cov = self.cov
        size = cov.K if cov.by_visit else self.full_size
        J = np.empty((self.n_cov, size, size))
        for a in range(self.n_cov):
            e = np.zeros(self.n_cov)
            e[a] = h
            J[a] = (full_cov(cov, raw + e, size) - full_cov(cov, raw - e, size)) / (2 * h)
        full = full_cov(cov, raw, size)
        info = np.zeros((self.n_cov, self.n_cov))
        for g in self.groups:
            W = np.linalg.inv(full[np.ix_(g.idx, g.idx)])
            Jg = J[:, g.idx][:, :, g.idx]
            M = W @ Jg @ W
            info += 0.5 * g.m * np.einsum("ajk,bkj->ab", M, Jg)
        return info

    def loglik(self, phi):
        return self.evaluate(phi, need_grad=False)[0]

    def vcov_beta(self, phi):
        _, _, st = self.evaluate(phi, need_grad=False)
        return linalg.cho_solve(st["cf"], np.eye(self.p))

    # -- per-subject pieces (sandwich, direct-density checks) ---------------
    def subject_terms(self, phi):
        """Per-subject ``(X_i, W_i, r_i, Sigma_i)`` at parameters ``phi``."""
        raw, theta = self._split(phi)
        beta = self.evaluate(phi, need_grad=False)[2]["beta"]
        full = None if self.cov.time_dependent else self._pattern_covs(raw)
        out = []
        for rows, idx, arm in zip(self.subject_rows, self.subject_idx, self.subject_arm):
            Xi = self.X[rows] * self._scale(theta, arm)
            if self.cov.time_dependent:
                S = time_cov(self.cov, raw, self.months[rows][None, :])[0]
            else:
                S = full[np.ix_(idx, idx)]
            out.append((Xi, np.linalg.inv(S), self.y[rows] - Xi @ beta, S))
        return out


def _pattern_grad(cov: CovSpec, raw, A):
    k = cov.kind
    if k is CovKind.UNSTRUCTURED:
        L = _chol_from_raw(raw, cov.K)
        G = 2.0 * A @ L
        G[np.diag_indices(cov.K)] *= np.diag(L)
        return G[np.tril_indices(cov.K)]
    if k is CovKind.HET_AR1:
        S = full_cov(cov, raw, cov.K)
        K = cov.K
        g = np.empty(K + 1)
        g[:K] = 2.0 * np.sum(A * S, axis=1)
        rho = _sym_logistic(raw[-1])
        lag = np.abs(np.subtract.outer(np.arange(K), np.arange(K)))
        sd = np.exp(raw[:-1])
        dS = np.outer(sd, sd) * lag * np.where(lag > 0, rho ** np.maximum(lag - 1, 0), 0.0)
        g[K] = np.sum(A * dS) * 0.5 * (1.0 - rho * rho)
        return g
    if k is CovKind.RANDOM_INTERCEPT:
        sa2, s2 = np.exp(2 * raw)
        return np.array([2.0 * sa2 * A.sum(), 2.0 * s2 * np.trace(A)])
    if k is CovKind.INDEPENDENT:
        return np.array([2.0 * np.exp(2 * raw[0]) * np.trace(A)])
    raise AssertionError(k)


def _time_grad(cov: CovSpec, raw, t, A):
    k = cov.kind
    if k in (CovKind.CAR1_EXP, CovKind.CAR1_CONST_PROP):
        S = time_cov(cov, raw, t)
        AS = A * S
        rho = 1.0 / (1.0 + math.exp(-raw[0]))
        lag = np.abs(t[:, :, None] - t[:, None, :])
        g_rho = np.sum(AS * lag) * (1.0 - rho)
        if k is CovKind.CAR1_EXP:
            g_sig = 2.0 * AS.sum()
            g_delta = np.sum(AS * (t[:, :, None] + t[:, None, :]))
            return np.array([g_rho, g_sig, g_delta])
        a2, b2 = math.exp(2 * raw[1]), math.exp(2 * raw[2])
        v = a2 + b2 * t * t
        fa = a2 / v
        fb = b2 * t * t / v
        g_a = np.sum(AS * (fa[:, :, None] + fa[:, None, :]))
        g_b = np.sum(AS * (fb[:, :, None] + fb[:, None, :]))
        return np.array([g_rho, g_a, g_b])
    if k is CovKind.RANDOM_SLOPE:
        sA = A.sum(axis=(1, 2))
        tA = np.einsum("mjk,mk->m", A, t)
        ttA = np.einsum("mj,mjk,mk->m", t, A, t)
        M = np.array([[sA.sum(), tA.sum()], [tA.sum(), ttA.sum()]])
        L = _chol_from_raw(raw[:3], 2)
        G = 2.0 * M @ L
        G[np.diag_indices(2)] *= np.diag(L)
        s2 = math.exp(2 * raw[3])
        tr = np.trace(A, axis1=1, axis2=2).sum()
        return np.r_[G[np.tril_indices(2)], 2.0 * s2 * tr]
    raise AssertionError(k)


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass
class FitResult:
    mean: MeanSpec
    cov: CovSpec
    beta: np.ndarray
    names: list
    cov_params: CovParams
    loglik: float
    vcov_beta: np.ndarray
    n_obs: int
    n_subjects: int
    n_params: int
    converged: bool
    warnings: list = field(default_factory=list)
    iterations: int = 0
    # the likelihood object is kept for inference (not serialized)
    model: ProfileLikelihood | None = field(default=None, repr=False, compare=False)
    phi: np.ndarray | None = field(default=None, repr=False, compare=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * self.n_params

    @property
    def cov_values(self) -> dict:
        return self.cov_params.values

    def coef(self) -> dict:
        return dict(zip(self.names, self.beta.tolist()))

    def to_dict(self) -> dict:
        vals = {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                for k, v in self.cov_values.items()}
        return {
            "mean": self.mean.to_dict(), "cov": self.cov.to_dict(),
            "coefficients": {"names": list(self.names), "values": self.beta.tolist()},
            "cov_params": {"raw": self.cov_params.raw.tolist(), "values": vals},
            "loglik": self.loglik, "aic": self.aic,
            "vcov": None if self.vcov_beta is None else self.vcov_beta.tolist(),
            "n_obs": self.n_obs, "n_subjects": self.n_subjects, "n_params": self.n_params,
            "converged": self.converged, "warnings": list(self.warnings),
            "iterations": self.iterations,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def aic(fit: FitResult) -> float:
    return fit.aic


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------

def _accepted(model, res, options, ll=None, gnorm=None) -> bool:
    if res.success:
        return True
    if ll is None:
        ll, grad, _ = model.evaluate(res.x)
        gnorm = float(np.linalg.norm(grad))
    if gnorm <= options.gtol:
        return True
    # line search stalled: accept when no further relative improvement is possible
    # and the gradient is small relative to the likelihood scale
    return res.status == 2 and gnorm <= 1e-4 * (1.0 + abs(ll)) and gnorm <= 1e-3 * model.n_obs ** 0.5


def _maximize(model: ProfileLikelihood, phi0, options: FitOptions):
    """Quasi-Newton (BFGS) maximization of the profiled log-likelihood."""
    scale = 1.0 / model.n_obs
    evals = {}

    def fun(phi):
        key = phi.tobytes()
        if key not in evals:
            evals.clear()
            try:
                ll, g, _ = model.evaluate(phi)
            except (np.linalg.LinAlgError, SingularDesign, FloatingPointError):
                return np.inf, np.zeros_like(phi)
            if not np.isfinite(ll):
                return np.inf, np.zeros_like(phi)
            evals[key] = (-ll * scale, -g * scale)
        return evals[key]

    opts = {"gtol": options.gtol * scale, "maxiter": options.max_iter, "norm": 2}
    phi0 = np.asarray(phi0, dtype=float)
    if not model.cov.time_dependent:
        # seed the quasi-Newton metric with the expected information
        try:
            info = model.expected_information(model._split(phi0)[0])
            H0 = np.eye(model.n_par)
            Hc = np.linalg.inv(info) / scale
            H0[:model.n_cov, :model.n_cov] = 0.5 * (Hc + Hc.T)
            np.linalg.cholesky(H0)
            opts["hess_inv0"] = H0
        except np.linalg.LinAlgError:
            pass
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        res = optimize.minimize(fun, phi0, jac=True, method="BFGS", options=opts)
        nit = int(res.nit)
        opts.pop("hess_inv0", None)
        for attempt in range(options.restarts):
            if _accepted(model, res, options):
                break
            # a stalled line search usually means a poor curvature estimate: restart the
            # metric from the identity, alternating with a derivative-free step
            if attempt % 2 == 1:
                nm = optimize.minimize(lambda p: fun(p)[0], res.x, method="Nelder-Mead",
                                       options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 2000})
                start = nm.x if nm.fun <= fun(res.x)[0] else res.x
            else:
                start = res.x
            res = optimize.minimize(fun, start, jac=True, method="BFGS", options=opts)
            nit += int(res.nit)
        phi = res.x
        ll, grad, _ = model.evaluate(phi)
    gnorm = float(np.linalg.norm(grad))
    warnings = []
    converged = _accepted(model, res, options, ll, gnorm)
    if not converged:
        warnings.append(f"{NON_CONVERGENCE}: {res.message.strip()} (|grad|={gnorm:.3g}, "
                        f"iterations={nit})")
    return phi, ll, converged, warnings, nit


def _boundary_warnings(cov: CovSpec, raw) -> list:
    vals = transform(cov, raw)
    out = []
    for key in ("sd_intercept", "sd_slope", "sigma", "a", "b"):
        if key in vals and vals[key] < 1e-6:
            out.append(f"{BOUNDARY_ESTIMATE}: {key}={vals[key]:.3g}")
    for key in ("rho", "corr"):
        if key in vals and np.ndim(vals[key]) == 0 and abs(vals[key]) > 1 - 1e-8:
            out.append(f"{BOUNDARY_ESTIMATE}: {key}={vals[key]:.6g}")
    if cov.kind is CovKind.UNSTRUCTURED:
        ev = np.linalg.eigvalsh(vals["cov"])
        if ev.min() < 1e-10 * ev.max():
            out.append(f"{BOUNDARY_ESTIMATE}: unstructured covariance nearly singular")
    return out


def _ols(X, y):
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        raise SingularDesign(f"design matrix has rank {rank} < {X.shape[1]} columns")
    return beta


def fit_gls_ml(mean: MeanSpec, cov: CovSpec, data: TrialData, *, start=None,
               options: FitOptions = FitOptions()) -> FitResult:
    """Fit a linear mean structure with the given covariance by maximum likelihood."""
    if mean.kind is MeanKind.PROPORTIONAL:
        raise IncompatibleSpec("use fit_proportional for the proportional model")
    data = complete_cases(data)
    mean = bind(mean, data)
    X, names = build_design(mean, data)
    y = np.asarray(data.y)
    beta_ols = _ols(X, y)
    if start is None:
        start = init_params(cov, data, residuals=y - X @ beta_ols).raw
    model = ProfileLikelihood(X, y, data, cov)
    phi, ll, converged, warnings, nit = _maximize(model, start, options)
    _, _, st = model.evaluate(phi, need_grad=False)
    vcov = linalg.cho_solve(st["cf"], np.eye(model.p))
    if converged:
        warnings += _boundary_warnings(cov, phi)
    return FitResult(
        mean=mean, cov=cov, beta=st["beta"], names=names, cov_params=CovParams(cov, phi),
        loglik=float(ll), vcov_beta=vcov, n_obs=model.n_obs, n_subjects=model.n_subjects,
        n_params=len(names) + cov.n_params, converged=converged, warnings=warnings,
        iterations=nit, model=model, phi=np.array(phi),
    )


def _ls_theta_start(X, y, scale_cols, arm):
    """Theta minimizing the residual sum of squares with the other effects profiled."""
    def rss(theta):
        Xs = X.copy()
        Xs[np.ix_(arm == 1, scale_cols)] *= math.exp(theta)
        b, *_ = np.linalg.lstsq(Xs, y, rcond=None)
        r = y - Xs @ b
        return float(r @ r)

    res = optimize.minimize_scalar(rss, bounds=(-10.0, 10.0), method="bounded",
                                   options={"xatol": 1e-8})
    return float(res.x)


def fit_proportional(data: TrialData, K: int, covariates=(), cov: CovSpec | None = None, *,
                     version_effect=False, options: FitOptions = FitOptions()) -> FitResult:
    """Proportional treatment-effect model.

    The active arm's cumulative visit steps are the placebo steps times
    ``exp(theta)``; intercept and covariate effects are shared. Coefficient
    names start with ``theta``. The fixed-effect covariance is the inverse of
    the linearized GLS information in (theta, beta).
    """
    cov = cov or CovSpec(CovKind.RANDOM_INTERCEPT)
    data = complete_cases(data)
    mean = bind(MeanSpec(MeanKind.PROPORTIONAL, K=K, covariates=tuple(covariates),
                         version_effect=version_effect), data)
    X, names = build_design(mean, data)
    y = np.asarray(data.y)
    arm = np.asarray(data.arm)
    scale_cols = np.zeros(X.shape[1], dtype=bool)
    scale_cols[1:K] = True
    _ols(X, y)
    theta0 = _ls_theta_start(X, y, scale_cols, arm)
    Xs = X.copy()
    Xs[np.ix_(arm == 1, scale_cols)] *= math.exp(theta0)
    b0 = _ols(Xs, y)
    raw0 = init_params(cov, data, residuals=y - Xs @ b0).raw
    model = ProfileLikelihood(X, y, data, cov, scale_cols=scale_cols)
    phi, ll, converged, warnings, nit = _maximize(model, np.r_[raw0, theta0], options)
    _, _, st = model.evaluate(phi, need_grad=False)
    theta = float(phi[-1])
    beta = st["beta"]
    info = _proportional_information(model, phi, beta)
    try:
        vcov = _safe_inverse(info)
    except SingularHessian as exc:
        # typically theta has run off towards +-infinity; the likelihood is still
        # reported (e.g. for AIC) but no Wald statistic can be formed
        vcov = None
        warnings.append(f"{SINGULAR_HESSIAN}: {exc}")
    if converged:
        warnings += _boundary_warnings(cov, phi[:-1])
    return FitResult(
        mean=mean, cov=cov, beta=np.r_[theta, beta], names=["theta"] + names,
        cov_params=CovParams(cov, phi[:-1]), loglik=float(ll), vcov_beta=vcov,
        n_obs=model.n_obs, n_subjects=model.n_subjects,
        n_params=1 + len(names) + cov.n_params, converged=converged, warnings=warnings,
        iterations=nit, model=model, phi=np.array(phi),
    )


def _proportional_information(model: ProfileLikelihood, phi, beta):
    """Linearized GLS information for (theta, beta) at fixed covariance parameters."""
    raw, theta = model._split(phi)
    full = model._pattern_covs(raw)
    p = model.p
    info = np.zeros((p + 1, p + 1))
    for g in model.groups:
        S = full[np.ix_(g.idx, g.idx)]
        W = np.linalg.inv(S)
        XtWX0 = np.tensordot(W, g.Sxx, axes=([0, 1], [0, 1]))
        d = model._scale(theta, g.arm)
        T = np.zeros((p, p + 1))
        if g.arm == 1:
            T[:, 0] = np.where(model.scale_cols, d, 0.0) * beta
        T[:, 1:] = np.diag(d)
        info += T.T @ XtWX0 @ T
    return info


def _safe_inverse(M):
    M = 0.5 * (M + M.T)
    w = np.linalg.eigvalsh(M)
    if w.min() <= M.shape[0] * np.finfo(float).eps * w.max():
        raise SingularHessian("information matrix is singular")
    return np.linalg.inv(M)


def fit(mean: MeanSpec, cov: CovSpec, data: TrialData, **kw) -> FitResult:
    """Dispatch to the linear or proportional fitter."""
    if mean.kind is MeanKind.PROPORTIONAL:
        return fit_proportional(data, mean.K, mean.covariates, cov,
                                version_effect=mean.version_effect, **kw)
    return fit_gls_ml(mean, cov, data, **kw)


def coef_names(mean: MeanSpec) -> list:
    return coefficient_names(mean)
