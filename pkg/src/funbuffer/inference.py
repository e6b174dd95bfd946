"""Non-null regions, second-stage refit and plug-in variances.

Variances are conditional on the selected region: the variability of the
first-stage selection is not propagated.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .basis import BSplineBasis, quadrature_grid
from .coxcore import NumericalError, chol_jitter, grad_hess
from .solver import FitResult, SolverOptions, fit_smooth
from .survdata import DesignedData
from .tuning import effective_df, refit_lambda2_grid

__all__ = [
    "RegionSelection",
    "InferenceResult",
    "CumulativeEffect",
    "select_regions",
    "selection_from_intervals",
    "refit",
    "simdiag",
    "variance_curve",
    "cumulative_effect",
]

Z975 = 1.959963984540054


@dataclass(frozen=True)
class RegionSelection:
    """Non-null knot intervals of a fitted coefficient function.

    ``interval_mask[j]`` is True when interval ``[kappa_j, kappa_{j+1}]``
    (0-based) carries a nonzero coefficient; ``active`` lists the basis
    functions supported on those intervals.
    """

    interval_mask: np.ndarray
    intervals: tuple[tuple[float, float], ...]
    active: np.ndarray
    buffer_distance: float

    @property
    def empty(self) -> bool:
        return not self.interval_mask.any()

    def contains(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        out = np.zeros(s.shape, dtype=bool)
        for lo, hi in self.intervals:
            out |= (s >= lo) & (s <= hi)
        return out

    def to_dict(self) -> dict:
        return {"buffer_distance": self.buffer_distance,
                "intervals": [list(iv) for iv in self.intervals],
                "nonnull_interval_indices": np.flatnonzero(self.interval_mask).tolist(),
                "active_basis": self.active.tolist()}


def _selection(basis: BSplineBasis, mask: np.ndarray) -> RegionSelection:
    mask = np.asarray(mask, dtype=bool)
    groups = basis.groups()
    active = np.unique(np.concatenate([groups[j] for j in np.flatnonzero(mask)])) if mask.any() \
        else np.zeros(0, dtype=int)
    merged = []
    for j in np.flatnonzero(mask):
        lo, hi = basis.interval(j)
        if merged and merged[-1][1] == lo:
            merged[-1] = (merged[-1][0], hi)
        else:
            merged.append((lo, hi))
    buffer = merged[-1][1] if merged else 0.0
    mask.setflags(write=False)
    return RegionSelection(mask, tuple(merged), active, float(buffer))


def select_regions(b, basis: BSplineBasis) -> RegionSelection:
    """Interval ``j`` is null iff every coefficient of its group is exactly zero."""
    if isinstance(b, FitResult):
        b = b.b
    b = np.asarray(b)
    if b.size != basis.n_basis:
        raise ValueError("coefficient vector does not match the basis")
    mask = np.array([np.any(b[g] != 0) for g in basis.groups()])
    return _selection(basis, mask)


def selection_from_intervals(basis: BSplineBasis, regions) -> RegionSelection:
    """Selection made of all knot intervals overlapping the given ``(lo, hi)`` regions."""
    mask = np.zeros(basis.n_intervals, dtype=bool)
    for lo, hi in regions:
        left, right = basis.breaks[:-1], basis.breaks[1:]
        mask |= (right > lo) & (left < hi)
    return _selection(basis, mask)


def simdiag(H: np.ndarray, P: np.ndarray, p: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Simultaneously diagonalise ``H`` (PD) and ``P`` (PSD).

    Returns ``R`` and the diagonal ``d`` with ``R' H R = I`` and
    ``R' P R = diag(d)``. The first ``q = m - p`` columns carry the
    eigenvalues in increasing order; the last ``p`` columns are the ``p``
    smallest eigen-directions, which for a ``P`` with a ``p x p`` zero
    covariate block are the unpenalized ones.
    """
    m = H.shape[0]
    U, _ = chol_jitter(0.5 * (H + H.T))
    Lc = U.T
    Linv_P = linalg.solve_triangular(Lc, 0.5 * (P + P.T), lower=True)
    M = linalg.solve_triangular(Lc, Linv_P.T, lower=True)
    M = 0.5 * (M + M.T)
    w, Q = linalg.eigh(M)
    cut = 1e-12 * max(np.abs(w).max(), 1.0) if w.size else 0.0
    w = np.where(np.abs(w) < cut, 0.0, w)
    R = linalg.solve_triangular(Lc.T, Q, lower=False)
    order = np.concatenate((np.arange(p, m), np.arange(p)))
    return R[:, order], w[order]


@dataclass
class InferenceResult:
    """Second-stage fit on the selected region with its variance ingredients."""

    basis: BSplineBasis
    selection: RegionSelection
    fit: FitResult
    lambda2: float
    n: int
    H: np.ndarray
    P: np.ndarray
    R: np.ndarray
    d: np.ndarray
    tuning: list = field(default_factory=list)

    @property
    def q(self) -> int:
        return self.selection.active.size

    @property
    def p(self) -> int:
        return self.fit.alpha.size - self.q

    @property
    def b(self) -> np.ndarray:
        return self.fit.alpha[: self.q]

    @property
    def theta(self) -> np.ndarray:
        return self.fit.alpha[self.q:]

    @property
    def pi(self) -> np.ndarray:
        return self.d[: self.q]

    def _basis_active(self, s) -> np.ndarray:
        return self.basis.evaluate(s)[:, self.selection.active]

    def beta(self, s) -> np.ndarray:
        """Refitted coefficient function (meaningful on the selected region only)."""
        if self.q == 0:
            return np.zeros(np.atleast_1d(s).shape)
        return self._basis_active(s) @ self.b

    def _quad_var(self, rows: np.ndarray) -> np.ndarray:
        # rows: (k, q) basis values or integrals; columns of rows @ R11|R12 are phi|psi
        proj = rows @ self.R[: self.q, :]
        # The refit minimises -l/n + lambda2 b'J0 b, whose stationarity condition carries
        # 2 lambda2 J0; the sandwich (H + 2 lambda2 P)^-1 H (H + 2 lambda2 P)^-1 / n is diagonal
        # in the R basis with factors 1 / (1 + 2 lambda2 pi)^2.
        w = np.ones(proj.shape[1])
        w[: self.q] = 1.0 / (1.0 + 2.0 * self.lambda2 * self.pi) ** 2
        return (proj ** 2 @ w) / self.n

    def curve_table(self, s) -> dict:
        s = np.asarray(s, dtype=float)
        b = self.beta(s)
        se = np.sqrt(variance_curve(self, s))
        return {"s": s, "beta": b, "se": se, "lo": b - Z975 * se, "hi": b + Z975 * se}

    def write_curve(self, path, s) -> None:
        tab = self.curve_table(s)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "beta", "se", "lo", "hi"])
            for k in range(tab["s"].size):
                w.writerow([f"{tab[c][k]:.10g}" for c in ("s", "beta", "se", "lo", "hi")])


def refit(data: DesignedData, selection: RegionSelection, basis: BSplineBasis, J: np.ndarray,
          lambda2_grid=None, options: SolverOptions = SolverOptions()) -> InferenceResult:
    """Smoothness-only refit on the active basis functions, ``lambda2`` chosen by BIC.

    Without an explicit ``lambda2_grid`` the candidates come from
    :func:`~funbuffer.tuning.refit_lambda2_grid` on the restricted design.
    With an empty selection the model reduces to the covariates alone.
    """
    act = selection.active
    sub = data.restrict(act)
    J0 = J[np.ix_(act, act)]
    if lambda2_grid is None:
        lambda2_grid = refit_lambda2_grid(sub, J0)
    lambda2_grid = np.unique(np.atleast_1d(np.asarray(lambda2_grid, dtype=float)))
    if act.size == 0:
        lambda2_grid = np.array([0.0])
    best, table, start = None, [], None
    for lam in lambda2_grid:
        f = fit_smooth(sub, lam, J0, start, options)
        start = f.alpha
        df, _ = effective_df(f, sub, J0, lam)
        crit = -2.0 * f.loglik + np.log(sub.n) * df
        table.append({"lambda2": float(lam), "bic": float(crit), "df": float(df),
                      "loglik": float(f.loglik), "converged": bool(f.converged)})
        if np.isfinite(crit) and (best is None or crit <= best[0]):
            best = (crit, lam, f)
    if best is None:
        raise NumericalError("second-stage refit produced no finite BIC")
    _, lam, f = best
    H = grad_hess(sub, f.alpha)[1] / sub.n
    m = H.shape[0]
    P = np.zeros((m, m))
    P[: act.size, : act.size] = J0
    R, d = simdiag(H, P, p=m - act.size)
    return InferenceResult(basis, selection, f, float(lam), sub.n, H, P, R, d, table)


def variance_curve(result: InferenceResult, s) -> np.ndarray:
    """Pointwise plug-in variance of the refitted coefficient function."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if result.q == 0:
        raise ValueError("no non-null region: the coefficient function was not refitted")
    tol = 1e-12 * result.basis.length
    inside = np.zeros(s.shape, dtype=bool)
    for lo, hi in result.selection.intervals:
        inside |= (s >= lo - tol) & (s <= hi + tol)
    if not inside.all():
        raise ValueError("variance requested outside the selected region")
    return result._quad_var(result._basis_active(s))


@dataclass(frozen=True)
class CumulativeEffect:
    estimate: float
    variance: float
    increment: float
    note: str = "conditional on selected region"

    @property
    def se(self) -> float:
        return float(np.sqrt(self.variance))

    @property
    def ci(self) -> tuple[float, float]:
        return self.estimate - Z975 * self.se, self.estimate + Z975 * self.se

    @property
    def hazard_ratio(self) -> float:
        return float(np.exp(self.increment * self.estimate))

    @property
    def hazard_ratio_ci(self) -> tuple[float, float]:
        lo, hi = self.ci
        a, b = np.exp(self.increment * lo), np.exp(self.increment * hi)
        return float(min(a, b)), float(max(a, b))

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "variance": self.variance, "se": self.se,
                "ci": list(self.ci), "increment": self.increment,
                "hazard_ratio": self.hazard_ratio, "hazard_ratio_ci": list(self.hazard_ratio_ci),
                "note": self.note}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def region_weights(result: InferenceResult, n_grid: int = 1001) -> np.ndarray:
    """``int_{S_s} B_u(s) ds`` for the active basis functions (trapezoid)."""
    grid, _ = quadrature_grid(result.basis, n_grid)
    g = np.zeros(result.q)
    for lo, hi in result.selection.intervals:
        pts = grid[(grid >= lo) & (grid <= hi)]
        g += np.trapezoid(result._basis_active(pts), pts, axis=0)
    return g


def cumulative_effect(result: InferenceResult, increment: float = 1.0,
                      n_grid: int = 1001) -> CumulativeEffect:
    """Integral of the refitted coefficient over the selected region, with variance."""
    if result.q == 0:
        return CumulativeEffect(0.0, 0.0, increment, note="no non-null region")
    g = region_weights(result, n_grid)
    est = float(g @ result.b)
    var = float(result._quad_var(g[None, :])[0])
    return CumulativeEffect(est, var, increment)
