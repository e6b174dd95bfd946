"""Effective degrees of freedom, BIC and grid selection of ``(lambda1, lambda2)``."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .coxcore import NumericalError, chol_jitter, grad_hess
from .solver import VARIANTS, FitResult, PenaltyConfig, SolverOptions, fit, fit_smooth
from .survdata import DesignedData

__all__ = [
    "TuningGrid",
    "TuningReport",
    "make_grid",
    "refit_lambda2_grid",
    "REFIT_L2_RANGE",
    "effective_df",
    "bic",
    "select",
]

_USES_L1 = {"Lasso", "Gbridge", "SplineLasso", "SplineGbridge"}
_USES_L2 = {"Spline", "SplineLasso", "SplineGbridge"}


@dataclass(frozen=True)
class TuningGrid:
    lambda1: np.ndarray
    lambda2: np.ndarray

    def __post_init__(self):
        l1 = np.unique(np.asarray(self.lambda1, dtype=float).ravel())
        l2 = np.unique(np.asarray(self.lambda2, dtype=float).ravel())
        if l1.size == 0 or l2.size == 0 or l1.min() < 0 or l2.min() < 0:
            raise ValueError("grids must be non-empty and non-negative")
        object.__setattr__(self, "lambda1", l1)
        object.__setattr__(self, "lambda2", l2)

    def for_variant(self, variant: str) -> "TuningGrid":
        """Collapse the axes a variant does not use to ``[0]``."""
        return TuningGrid(self.lambda1 if variant in _USES_L1 else [0.0],
                          self.lambda2 if variant in _USES_L2 else [0.0])


# The refit penalty J0 has no affine null space (coefficients outside the
# region are pinned at zero), so a large lambda2 shrinks the refit towards
# zero instead of towards a line. The cap keeps smoothing from acting as a
# second selection step.
REFIT_L2_RANGE = (1e-2, 1e2)


def _scales(data: DesignedData, J: np.ndarray) -> tuple[float, float]:
    n, L = data.n, data.n_basis
    g, H = grad_hess(data, np.zeros(data.X.shape[1]))
    trJ = np.trace(J)
    s2 = np.trace(H[:L, :L]) / (n * trJ) if trJ > 0 else 1.0
    return float(np.max(np.abs(g)) / n), float(s2)


def _logspace(scale, rng, k):
    return scale * np.logspace(np.log10(rng[0]), np.log10(rng[1]), k)


def make_grid(data: DesignedData, J: np.ndarray, n1: int = 20, n2: int = 10,
              l1_range=(1e-4, 1e1), l2_range=(1e-1, 1e4)) -> TuningGrid:
    """Log-spaced grid anchored on the data.

    ``lambda1`` spans ``l1_range`` times ``||grad(-l_n)(0)||_inf / n``;
    ``lambda2`` spans ``l2_range`` times ``tr(H_bb(0)) / (n tr(J))``, the
    ratio of likelihood curvature to roughness on the spline block.
    """
    s1, s2 = _scales(data, J)
    return TuningGrid(_logspace(s1, l1_range, n1), _logspace(s2, l2_range, n2))


def refit_lambda2_grid(data: DesignedData, J0: np.ndarray, n2: int = 10,
                       l2_range=REFIT_L2_RANGE) -> np.ndarray:
    """Default ``lambda2`` candidates for a region refit, anchored like :func:`make_grid`."""
    if data.n_basis == 0:
        return np.array([0.0])
    return _logspace(_scales(data, J0)[1], l2_range, n2)


def effective_df(fit: FitResult, data: DesignedData, J: np.ndarray, lambda2: float | None = None,
                 hessian: np.ndarray | None = None) -> tuple[float, bool]:
    """``tr[(H0 + n lambda2 J0)^{-1} H0]`` over nonzero spline and all covariate coordinates.

    Returns the df and a flag telling whether jitter was needed.
    """
    if lambda2 is None:
        lambda2 = fit.config.lambda2
    L = data.n_basis
    H = grad_hess(data, fit.alpha)[1] if hessian is None else hessian
    active = np.concatenate((np.flatnonzero(fit.b != 0), np.arange(L, data.X.shape[1])))
    if active.size == 0:
        return 0.0, False
    H0 = H[np.ix_(active, active)]
    A = H0.copy()
    nb = int(np.count_nonzero(fit.b))
    if lambda2 > 0 and nb:
        bidx = active[:nb]
        A[:nb, :nb] += data.n * lambda2 * J[np.ix_(bidx, bidx)]
    U, eps = chol_jitter(A)
    return float(np.trace(linalg.cho_solve((U, False), H0))), eps > 0


def bic(fit: FitResult, data: DesignedData, J: np.ndarray, lambda2: float | None = None) -> float:
    """``-2 l_n(alpha_hat) + log(n) df``."""
    df, _ = effective_df(fit, data, J, lambda2)
    return -2.0 * fit.loglik + np.log(data.n) * df


@dataclass
class TuningReport:
    variant: str
    grid: TuningGrid
    table: list = field(default_factory=list)
    selected: tuple[float, float] | None = None
    fit: FitResult | None = None

    def bic_surface(self) -> np.ndarray:
        """BIC values with rows indexed by ``lambda2`` and columns by ``lambda1``."""
        S = np.full((self.grid.lambda2.size, self.grid.lambda1.size), np.nan)
        for r in self.table:
            S[r["i2"], r["i1"]] = r["bic"]
        return S

    def to_csv(self, path) -> None:
        keys = ["lambda1", "lambda2", "bic", "df", "loglik", "nonzero_b", "converged", "flag"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(keys)
            for r in self.table:
                w.writerow([f"{r[k]:.10g}" if isinstance(r[k], float) else r[k] for k in keys])

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "selected": {"lambda1": self.selected[0], "lambda2": self.selected[1]} if self.selected else None,
            "lambda1_grid": self.grid.lambda1.tolist(),
            "lambda2_grid": self.grid.lambda2.tolist(),
            "table": [{k: v for k, v in r.items() if k not in ("i1", "i2")} for r in self.table],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _row(args):
    (data, variant, i2, lam2, lambda1, J, groups, n_starts, seed, start, options, gamma) = args
    rows, fits = [], []
    try:
        smooth = fit_smooth(data, lam2, J, start, options)
    except NumericalError as exc:
        for i1, lam1 in enumerate(lambda1):
            rows.append(_failed(i1, i2, lam1, lam2, str(exc)))
            fits.append(None)
        return rows, fits, None
    for i1, lam1 in enumerate(lambda1):
        cfg = PenaltyConfig(lam1, lam2, gamma=gamma, variant=variant)
        cell_seed = None if seed is None else [seed, i2, i1]
        try:
            res = fit(data, cfg, J, groups, n_starts=n_starts, seed=cell_seed, init=smooth, options=options)
            df, jittered = effective_df(res, data, J, lam2)
            b = -2.0 * res.loglik + np.log(data.n) * df
            flag = "" if res.converged else "not_converged"
            if jittered:
                flag = (flag + ";df_jitter").lstrip(";")
            if not np.isfinite(b):
                flag = (flag + ";nonfinite").lstrip(";")
            rows.append(dict(i1=i1, i2=i2, lambda1=float(lam1), lambda2=float(lam2), bic=float(b),
                             df=float(df), loglik=float(res.loglik),
                             nonzero_b=int(np.count_nonzero(res.b)),
                             converged=bool(res.converged), flag=flag))
            fits.append(res)
        except NumericalError as exc:
            rows.append(_failed(i1, i2, lam1, lam2, str(exc)))
            fits.append(None)
    return rows, fits, smooth.alpha


def _failed(i1, i2, lam1, lam2, msg):
    return dict(i1=i1, i2=i2, lambda1=float(lam1), lambda2=float(lam2), bic=float("nan"),
                df=float("nan"), loglik=float("nan"), nonzero_b=-1, converged=False,
                flag="numerical_failure")


def select(data: DesignedData, variant: str, grid: TuningGrid, J: np.ndarray, groups,
           n_starts: int = 1, seed=None, warm_start: bool = True, workers: int = 1,
           gamma: float = 0.5, options: SolverOptions = SolverOptions()) -> TuningReport:
    """Evaluate BIC over the whole grid and keep the minimiser.

    The smoothness-only initial fit depends on ``lambda2`` alone, so it is
    computed once per ``lambda2`` row and shared by every ``lambda1`` in that
    row. With ``warm_start`` each row's initial fit starts Newton from the
    previous row's solution. Exact BIC ties go to the larger ``lambda1``, then
    the larger ``lambda2``.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    grid = grid.for_variant(variant)
    l1, l2 = grid.lambda1, grid.lambda2
    rows, fits = [], {}
    if workers > 1 and not warm_start:
        tasks = [(data, variant, i2, lam2, l1, J, groups, n_starts, seed, None, options, gamma)
                 for i2, lam2 in enumerate(l2)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_row, tasks))
    else:
        results, start = [], None
        for i2, lam2 in enumerate(l2):
            out = _row((data, variant, i2, lam2, l1, J, groups, n_starts, seed,
                        start if warm_start else None, options, gamma))
            results.append(out)
            if out[2] is not None:
                start = out[2]
    for r_rows, r_fits, _ in results:
        for r, f in zip(r_rows, r_fits):
            rows.append(r)
            fits[(r["i1"], r["i2"])] = f
    report = TuningReport(variant, grid, rows)
    ok = [r for r in rows if np.isfinite(r["bic"])]
    if ok:
        best = min(ok, key=lambda r: (r["bic"], -r["lambda1"], -r["lambda2"]))
        report.selected = (best["lambda1"], best["lambda2"])
        report.fit = fits[(best["i1"], best["i2"])]
    return report
