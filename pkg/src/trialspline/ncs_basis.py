"""Natural cubic spline bases.

The basis is built the same way as R's ``splines::ns`` with
``intercept=FALSE``: a cubic B-spline basis on the augmented knot sequence,
first column dropped, projected onto the null space of the second-derivative
constraints at both boundary knots. Every basis function is therefore zero at
the lower boundary and linear outside ``[lower, upper]``.

Reproducing that exact parameterization matters for the trial generator,
whose published coefficients refer to it; the analysis models only depend on
the spanned function space.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import BSpline

from .errors import DegenerateTimes, KnotOrdering


def quantile7(x, probs):
    """Sample quantiles by linear interpolation between order statistics."""
    x = np.sort(np.asarray(x, dtype=float))
    n = len(x)
    h = (n - 1) * np.asarray(probs, dtype=float)
    lo = np.floor(h).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    return x[lo] + (h - lo) * (x[hi] - x[lo])


@dataclass(frozen=True)
class SplineBasis:
    boundary: tuple[float, float]
    interior_knots: tuple[float, ...]
    _proj: np.ndarray = field(init=False, repr=False, compare=False)
    _bspl: BSpline = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        lo, hi = (float(b) for b in self.boundary)
        knots = tuple(float(k) for k in self.interior_knots)
        if not lo < hi:
            raise KnotOrdering(f"boundary must satisfy lower < upper, got {self.boundary}")
        if any(not lo < k < hi for k in knots):
            raise KnotOrdering(f"interior knots {knots} not strictly inside {self.boundary}")
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise KnotOrdering(f"interior knots {knots} must be sorted and distinct")
        object.__setattr__(self, "boundary", (lo, hi))
        object.__setattr__(self, "interior_knots", knots)

        t = np.r_[[lo] * 4, knots, [hi] * 4]
        nb = len(t) - 4
        bspl = BSpline(t, np.eye(nb), 3, extrapolate=True)
        const = bspl.derivative(2)(np.array([lo, hi]))[:, 1:]
        q, _ = np.linalg.qr(const.T, mode="complete")
        proj = q[:, 2:]
        proj.setflags(write=False)
        object.__setattr__(self, "_bspl", bspl)
        object.__setattr__(self, "_proj", proj)

    @property
    def m(self) -> int:
        return len(self.interior_knots) + 1

    def _raw(self, t, nu):
        if nu == 0:
            return self._bspl(t)[:, 1:] @ self._proj
        return self._bspl.derivative(nu)(t)[:, 1:] @ self._proj

    def __call__(self, t, deriv: int = 0) -> np.ndarray:
        """Evaluate the basis (or a derivative) at ``t``; returns ``(len(t), m)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        lo, hi = self.boundary
        below, above = t < lo, t > hi
        inside = ~(below | above)
        out = np.empty((len(t), self.m))
        if inside.any():
            out[inside] = self._raw(t[inside], deriv)
        for mask, edge in ((below, lo), (above, hi)):
            if not mask.any():
                continue
            if deriv == 0:
                v0 = self._raw(np.array([edge]), 0)
                d1 = self._raw(np.array([edge]), 1)
                out[mask] = v0 + (t[mask] - edge)[:, None] * d1
            elif deriv == 1:
                out[mask] = self._raw(np.array([edge]), 1)
            else:
                out[mask] = 0.0
        if deriv >= 2:
            # exact zeros at the boundaries (natural constraint)
            out[(t == lo) | (t == hi)] = 0.0
        return out

    def to_dict(self) -> dict:
        return {"boundary": list(self.boundary), "knots": list(self.interior_knots), "m": self.m}

    @classmethod
    def from_dict(cls, d) -> "SplineBasis":
        return cls(tuple(d["boundary"]), tuple(d["knots"]))


def make_basis(times: Sequence[float], df: int) -> SplineBasis:
    """Basis with ``df - 1`` interior knots at equally spaced quantiles of ``times``."""
    if df < 1:
        raise ValueError("df must be >= 1")
    times = np.asarray(times, dtype=float)
    if times.size == 0 or len(np.unique(times)) < df + 1:
        raise DegenerateTimes(f"need at least {df + 1} distinct times for df={df}")
    probs = np.arange(1, df) / df
    knots = tuple(quantile7(times, probs)) if df > 1 else ()
    return SplineBasis((float(times.min()), float(times.max())), knots)


def make_basis_explicit(boundary, interior_knots) -> SplineBasis:
    return SplineBasis(tuple(boundary), tuple(interior_knots))


def eval_basis(basis: SplineBasis, t: float) -> np.ndarray:
    return basis(np.array([t]))[0]


def eval_basis_deriv2(basis: SplineBasis, t: float) -> np.ndarray:
    return basis(np.array([t]), deriv=2)[0]
