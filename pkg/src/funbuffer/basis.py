"""B-spline bases, roughness penalty and exposure integrals.

All bases live on a closed interval ``[s_lo, s_hi]`` given in physical units.
Internally the interval is mapped affinely onto ``[0, 1]``; derivatives
returned by :meth:`BSplineBasis.evaluate` and the roughness matrix are taken
with respect to that unit coordinate, so penalty scales do not depend on
the measurement units of the domain.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "BasisSpec",
    "BSplineBasis",
    "PenaltyMatrices",
    "build_basis",
    "roughness_matrix",
    "quadrature_grid",
    "functional_design_row",
]

DEFAULT_GRID = 1001


@dataclass(frozen=True)
class BasisSpec:
    """Degree, knots and domain of a B-spline basis.

    ``knots`` optionally overrides the equally spaced inner knots; it holds
    the inner knots only, in physical units.
    """

    degree: int = 3
    n_inner: int = 26
    domain: tuple[float, float] = (0.0, 1.0)
    knots: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.knots is not None:
            object.__setattr__(self, "knots", tuple(float(k) for k in self.knots))
            object.__setattr__(self, "n_inner", len(self.knots))
        object.__setattr__(self, "domain", (float(self.domain[0]), float(self.domain[1])))


def _cox_de_boor(t: np.ndarray, degree: int, u: np.ndarray, n_basis: int) -> np.ndarray:
    # Degree-0 indicators on the non-degenerate spans, right end closed.
    n_spans = len(t) - 1
    idx = np.searchsorted(t, u, side="right") - 1
    full_degree = len(t) - n_basis - 1
    idx = np.clip(idx, full_degree, n_basis - 1)
    B = np.zeros((u.size, n_spans))
    B[np.arange(u.size), idx] = 1.0
    for k in range(1, degree + 1):
        ncol = n_spans - k
        out = np.zeros((u.size, ncol))
        for j in range(ncol):
            dl = t[j + k] - t[j]
            dr = t[j + k + 1] - t[j + 1]
            if dl > 0:
                out[:, j] += (u - t[j]) / dl * B[:, j]
            if dr > 0:
                out[:, j] += (t[j + k + 1] - u) / dr * B[:, j + 1]
        B = out
    return B


class BSplineBasis:
    """Clamped B-spline basis of a given degree on ``[s_lo, s_hi]``.

    Parameters
    ----------
    degree : int
        Polynomial degree ``d`` (>= 1).
    n_inner : int
        Number of equally spaced inner knots ``M_n``. Ignored when
        ``knots`` is given.
    domain : (float, float)
        Physical interval.
    knots : sequence of float, optional
        Explicit inner knots in physical units, strictly increasing and
        strictly inside the domain.
    """

    def __init__(self, degree: int = 3, n_inner: int = 26,
                 domain: tuple[float, float] = (0.0, 1.0),
                 knots: Sequence[float] | None = None):
        degree = int(degree)
        if degree < 1:
            raise ValueError(f"degree must be >= 1, got {degree}")
        lo, hi = float(domain[0]), float(domain[1])
        if not hi > lo:
            raise ValueError(f"domain must satisfy lo < hi, got ({lo}, {hi})")
        if knots is None:
            if int(n_inner) < 1:
                raise ValueError("need at least one inner knot")
            inner = np.linspace(lo, hi, int(n_inner) + 2)[1:-1]
        else:
            inner = np.asarray(knots, dtype=float).ravel()
            if inner.size < 1:
                raise ValueError("need at least one inner knot")
        breaks = np.concatenate(([lo], inner, [hi]))
        if np.any(np.diff(breaks) <= 0):
            raise ValueError("knots must be strictly increasing and inside the domain")
        self.degree = degree
        self.domain = (lo, hi)
        self.breaks = breaks
        self.breaks.setflags(write=False)
        self.n_inner = inner.size
        self.n_basis = self.n_inner + degree + 1
        self.n_intervals = self.n_inner + 1
        ub = (breaks - lo) / (hi - lo)
        ub[0], ub[-1] = 0.0, 1.0
        self._unit_breaks = ub
        self.t = np.concatenate((np.zeros(degree), ub, np.ones(degree)))
        self.t.setflags(write=False)

    @classmethod
    def from_spec(cls, spec: BasisSpec) -> "BSplineBasis":
        return cls(spec.degree, spec.n_inner, spec.domain, spec.knots)

    @property
    def length(self) -> float:
        return self.domain[1] - self.domain[0]

    @property
    def spec(self) -> BasisSpec:
        return BasisSpec(self.degree, self.n_inner, self.domain, tuple(self.breaks[1:-1]))

    def to_unit(self, s) -> np.ndarray:
        return (np.asarray(s, dtype=float) - self.domain[0]) / self.length

    def evaluate(self, s, deriv: int = 0) -> np.ndarray:
        """Basis values (or derivatives in the unit coordinate) at ``s``.

        Returns an array of shape ``(len(s), n_basis)``.
        """
        s = np.atleast_1d(np.asarray(s, dtype=float))
        lo, hi = self.domain
        tol = 1e-12 * self.length
        if np.any(s < lo - tol) or np.any(s > hi + tol):
            raise ValueError("evaluation points outside the basis domain")
        u = np.clip(self.to_unit(s), 0.0, 1.0)
        if deriv < 0 or deriv > self.degree:
            if deriv > self.degree:
                return np.zeros((u.size, self.n_basis))
            raise ValueError("deriv must be non-negative")
        t, d = self.t, self.degree
        B = _cox_de_boor(t, d - deriv, u, self.n_basis)
        # raise degree through the derivative recurrence
        for k in range(d - deriv + 1, d + 1):
            ncol = B.shape[1] - 1
            out = np.zeros((u.size, ncol))
            for j in range(ncol):
                dl = t[j + k] - t[j]
                dr = t[j + k + 1] - t[j + 1]
                if dl > 0:
                    out[:, j] += k * B[:, j] / dl
                if dr > 0:
                    out[:, j] -= k * B[:, j + 1] / dr
            B = out
        return B

    __call__ = evaluate

    def groups(self) -> list[np.ndarray]:
        """Coefficient groups ``A_j = {j, ..., j + d}``, one per inter-knot interval."""
        return [np.arange(j, j + self.degree + 1) for j in range(self.n_intervals)]

    def group_matrix(self) -> np.ndarray:
        """Boolean ``(n_intervals, n_basis)`` membership matrix of the groups."""
        G = np.zeros((self.n_intervals, self.n_basis), dtype=bool)
        for j, g in enumerate(self.groups()):
            G[j, g] = True
        return G

    def support(self, k: int) -> tuple[float, float]:
        """Physical interval outside which basis function ``k`` (0-based) vanishes."""
        d = self.degree
        left = self.breaks[max(k - d, 0)]
        right = self.breaks[min(k + 1, self.n_intervals)]
        return float(left), float(right)

    def interval(self, j: int) -> tuple[float, float]:
        return float(self.breaks[j]), float(self.breaks[j + 1])

    def __repr__(self):
        return (f"BSplineBasis(degree={self.degree}, n_inner={self.n_inner}, "
                f"domain={self.domain})")


def build_basis(spec: BasisSpec) -> BSplineBasis:
    return BSplineBasis.from_spec(spec)


@dataclass(frozen=True)
class PenaltyMatrices:
    """Roughness matrix ``J`` and a square-root factor ``D`` with ``J = D.T @ D``."""

    J: np.ndarray
    D: np.ndarray
    eig_clamp: float = field(default=0.0)

    def J_star(self, p: int) -> np.ndarray:
        """``J`` embedded block-diagonally next to a ``p x p`` zero block."""
        L = self.J.shape[0]
        out = np.zeros((L + p, L + p))
        out[:L, :L] = self.J
        return out

    @property
    def rank(self) -> int:
        return self.D.shape[0]


def roughness_matrix(basis: BSplineBasis, clamp: float = 1e-12) -> PenaltyMatrices:
    """Integrated products of second derivatives, exact per knot interval.

    Gauss-Legendre with ``d`` nodes per interval integrates the degree
    ``2(d - 2)`` integrands exactly.
    """
    if basis.degree < 2:
        raise ValueError("roughness penalty needs degree >= 2")
    nodes, weights = np.polynomial.legendre.leggauss(basis.degree)
    ub = basis._unit_breaks
    a, b = ub[:-1], ub[1:]
    half = 0.5 * (b - a)
    u = (0.5 * (a + b))[:, None] + half[:, None] * nodes[None, :]
    w = (half[:, None] * weights[None, :]).ravel()
    s = basis.domain[0] + u.ravel() * basis.length
    B2 = basis.evaluate(s, deriv=2)
    J = (B2 * w[:, None]).T @ B2
    J = 0.5 * (J + J.T)
    evals, evecs = np.linalg.eigh(J)
    cut = clamp * max(evals.max(), 0.0)
    keep = evals > cut
    D = np.sqrt(evals[keep])[:, None] * evecs[:, keep].T
    return PenaltyMatrices(J=J, D=D, eig_clamp=cut)


def quadrature_grid(basis: BSplineBasis, n_grid: int = DEFAULT_GRID) -> tuple[np.ndarray, np.ndarray]:
    """Fixed trapezoid grid over the domain with the knots inserted.

    Returns the grid points and their trapezoid weights (physical measure).
    """
    lo, hi = basis.domain
    grid = np.union1d(np.linspace(lo, hi, n_grid), basis.breaks)
    h = np.diff(grid)
    w = np.zeros_like(grid)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return grid, w


def functional_design_row(basis: BSplineBasis, x: Callable, n_grid: int = DEFAULT_GRID) -> np.ndarray:
    """``(int x(s) B_k(s) ds)_k`` over the physical domain by the trapezoid rule."""
    grid, w = quadrature_grid(basis, n_grid)
    vals = np.asarray(x(grid), dtype=float)
    if vals.shape != grid.shape or not np.all(np.isfinite(vals)):
        raise ValueError("exposure function is not defined on the whole basis domain")
    return basis.evaluate(grid).T @ (w * vals)
