"""Independent reference computations used by the tests.

Nothing here imports the fitting code paths it checks: the spline oracle is
the truncated-power natural-spline representation and the likelihood oracle
evaluates a dense multivariate normal density subject by subject.
"""
import numpy as np
from scipy import stats


def truncated_power_ns(x, knots):
    """Natural cubic spline basis {1, x, N_3..N_K} for knots incl. boundaries."""
    x = np.asarray(x, dtype=float)
    k = np.asarray(knots, dtype=float)
    K = len(k)

    def d(j):
        return (np.clip(x - k[j], 0, None) ** 3 - np.clip(x - k[-1], 0, None) ** 3) / (k[-1] - k[j])

    cols = [np.ones_like(x), x] + [d(j) - d(K - 2) for j in range(K - 2)]
    return np.column_stack(cols)


def projection(M):
    q, r = np.linalg.qr(M)
    rank = np.sum(np.abs(np.diag(r)) > 1e-10 * np.abs(r).max())
    q = q[:, :rank]
    return q @ q.T


def dense_mvn_loglik(y, X, beta, blocks):
    """Sum of per-subject MVN log densities; ``blocks`` is a list of (rows, Sigma)."""
    total = 0.0
    for rows, S in blocks:
        mu = X[rows] @ beta
        total += stats.multivariate_normal(mean=mu, cov=S).logpdf(y[rows])
    return float(total)
