"""Penalized estimators for the functional linear Cox model.

The penalized criterion (to be minimised) is::

    -l_n(alpha) / n + lambda1 * P_sparse(b) + lambda2 * b' J b

with ``P_sparse`` either the group bridge ``sum_j ||b_{A_j}||_1 ** gamma``
over the overlapping groups ``A_j = {j, ..., j + d}`` or the lasso
``||b||_1``. Each outer iteration expands ``-l_n`` to second order about the
current iterate, linearises the bridge penalty into per-coefficient lasso
weights, and solves the resulting weighted lasso by coordinate descent.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import linalg

from .coxcore import chol_jitter, gram_surrogate, logpl, value_grad_hess
from .survdata import DesignedData

__all__ = [
    "VARIANTS",
    "PenaltyConfig",
    "FitResult",
    "SolverOptions",
    "zeta",
    "update_group_weights",
    "bridge_weights",
    "weighted_lasso_cd",
    "cd_gram",
    "fit_smooth",
    "fit",
    "penalized_objective",
]

VARIANTS = ("Spline", "Lasso", "Gbridge", "SplineLasso", "SplineGbridge")
_BRIDGE = {"Gbridge", "SplineGbridge"}
_SMOOTH = {"Spline", "SplineLasso", "SplineGbridge"}


@dataclass(frozen=True)
class PenaltyConfig:
    lambda1: float = 0.0
    lambda2: float = 0.0
    gamma: float = 0.5
    variant: str = "SplineGbridge"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("tuning parameters must be non-negative")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.variant == "Spline" and self.lambda1 != 0:
            raise ValueError("Spline variant requires lambda1 = 0")
        if self.variant in ("Lasso", "Gbridge") and self.lambda2 != 0:
            raise ValueError(f"{self.variant} variant requires lambda2 = 0")

    @property
    def bridge(self) -> bool:
        return self.variant in _BRIDGE


@dataclass(frozen=True)
class SolverOptions:
    smooth_tol: float = 1e-7
    smooth_max_iter: int = 50
    outer_tol: float = 1e-6
    outer_max_iter: int = 100
    cd_tol: float = 1e-8
    cd_max_sweeps: int = 10000
    max_halvings: int = 20


@dataclass
class FitResult:
    """Estimated coefficients ``alpha = (b, theta)`` and solver diagnostics."""

    alpha: np.ndarray
    n_basis: int
    config: PenaltyConfig
    converged: bool
    n_iter: int
    objective: float
    loglik: float
    trace: list = field(default_factory=list)
    mu: np.ndarray | None = None
    xi: np.ndarray | None = None
    jitter: float = 0.0
    start: int = 0

    @property
    def b(self) -> np.ndarray:
        return self.alpha[: self.n_basis]

    @property
    def theta(self) -> np.ndarray:
        return self.alpha[self.n_basis:]

    def beta(self, basis, s) -> np.ndarray:
        """Estimated coefficient function ``B(s)^T b`` at ``s``."""
        return basis.evaluate(s) @ self.b

    def diagnostics(self) -> dict:
        return {
            "variant": self.config.variant,
            "lambda1": self.config.lambda1,
            "lambda2": self.config.lambda2,
            "gamma": self.config.gamma,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "objective": self.objective,
            "loglik": self.loglik,
            "jitter": self.jitter,
            "start": self.start,
            "nonzero_b": int(np.count_nonzero(self.b)),
        }


def zeta(lambda1: float, gamma: float) -> float:
    return lambda1 ** (1.0 / (1.0 - gamma)) * gamma ** (gamma / (1.0 - gamma)) * (1.0 - gamma)


def update_group_weights(b: np.ndarray, lambda1: float, gamma: float, groups) -> tuple[np.ndarray, np.ndarray]:
    """Group scales ``mu_j`` and coefficient weights ``xi_k`` for the bridge step.

    Coefficients belonging to a group whose ``mu_j`` is zero get
    ``xi_k = inf``, i.e. they are frozen at zero.
    """
    if lambda1 <= 0:
        raise ValueError("lambda1 must be positive for group bridge weights")
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    z = zeta(lambda1, gamma)
    norms = np.array([np.abs(b[g]).sum() for g in groups])
    mu = ((1.0 - gamma) / (gamma * z)) ** gamma * norms ** gamma
    xi = np.zeros(b.size)
    with np.errstate(divide="ignore"):
        contrib = np.where(mu > 0, mu ** (1.0 - 1.0 / gamma), np.inf)
    for g, c in zip(groups, contrib):
        xi[g] += c
    return mu, xi


def bridge_weights(b: np.ndarray, lambda1: float, gamma: float, groups) -> np.ndarray:
    """``xi_k = lambda1 * gamma * sum_{j: k in A_j} ||b_{A_j}||_1 ** (gamma - 1)``.

    Same weights as :func:`update_group_weights`, written as the derivative of
    the bridge penalty; unlike the ``mu`` form it is also defined at ``gamma = 1``.
    """
    xi = np.zeros(b.size)
    for g in groups:
        nrm = np.abs(b[g]).sum()
        if nrm == 0:
            xi[g] = np.inf
        else:
            xi[g] += lambda1 * gamma * nrm ** (gamma - 1.0)
    return xi


@numba.njit(cache=True)
def _cd_kernel(G, c, xi, free, x, tol, max_sweeps):
    m = c.size
    Gx = G @ x
    sweeps = 0
    active_only = False
    while sweeps < max_sweeps:
        sweeps += 1
        maxdelta = 0.0
        for k in range(m):
            if not free[k]:
                continue
            if active_only and x[k] == 0.0:
                continue
            gkk = G[k, k]
            if gkk <= 0.0:
                continue
            r = c[k] - Gx[k] + gkk * x[k]
            pen = xi[k]
            if pen > 0.0:
                a = abs(r) - pen
                new = 0.0 if a <= 0.0 else np.sign(r) * a / gkk
            else:
                new = r / gkk
            delta = new - x[k]
            if delta != 0.0:
                x[k] = new
                for l in range(m):
                    Gx[l] += G[l, k] * delta
                ad = abs(delta)
                if ad > maxdelta:
                    maxdelta = ad
        if maxdelta < tol:
            if active_only:
                active_only = False  # confirm with a full sweep
            else:
                break
        elif not active_only:
            active_only = True
    return sweeps


def cd_gram(G: np.ndarray, c: np.ndarray, xi: np.ndarray, x0: np.ndarray | None = None,
            tol: float = 1e-8, max_sweeps: int = 10000) -> tuple[np.ndarray, int]:
    """Minimise ``0.5 a'Ga - c'a + sum_k xi_k |a_k|`` by cyclic coordinate descent.

    ``xi_k = 0`` leaves coordinate ``k`` unpenalized, ``xi_k = inf`` freezes it
    at zero. Zeros in the solution are exact.
    """
    m = c.size
    xi = np.asarray(xi, dtype=float)
    free = ~np.isinf(xi)
    x = np.zeros(m) if x0 is None else np.array(x0, dtype=float)
    x[~free] = 0.0
    xi_f = np.where(free, xi, 0.0)
    sweeps = _cd_kernel(np.ascontiguousarray(G, dtype=float), np.asarray(c, dtype=float),
                        xi_f, free, x, float(tol), int(max_sweeps))
    return x, sweeps


def weighted_lasso_cd(Ybar: np.ndarray, Vbar: np.ndarray, xi: np.ndarray, n: int,
                      x0=None, tol: float = 1e-8, max_sweeps: int = 10000) -> np.ndarray:
    """Minimise ``(1/2n)||Ybar - Vbar a||^2 + sum_k xi_k |a_k|``.

    ``xi`` covers all coordinates; pass 0 for the unpenalized covariate block.
    """
    G = Vbar.T @ Vbar / n
    c = Vbar.T @ Ybar / n
    return cd_gram(G, c, xi, x0, tol, max_sweeps)[0]


def penalized_objective(data: DesignedData, alpha: np.ndarray, config: PenaltyConfig,
                        J: np.ndarray, groups, loglik: float | None = None) -> float:
    """``-l_n/n + lambda1 * sparse penalty + lambda2 * b'Jb``."""
    L = J.shape[0]
    b = alpha[:L]
    if loglik is None:
        loglik = logpl(data, alpha)
    val = -loglik / data.n
    if config.lambda2 > 0:
        val += config.lambda2 * float(b @ J @ b)
    if config.lambda1 > 0:
        if config.bridge:
            val += config.lambda1 * sum(np.abs(b[g]).sum() ** config.gamma for g in groups)
        else:
            val += config.lambda1 * float(np.abs(b).sum())
    return val


def _solve_spd(A: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, float]:
    U, eps = chol_jitter(A)
    return linalg.cho_solve((U, False), rhs), eps


def fit_smooth(data: DesignedData, lambda2: float, J: np.ndarray, alpha0=None,
               options: SolverOptions = SolverOptions()) -> FitResult:
    """Smoothness-penalized partial likelihood by damped Newton iterations.

    Each iteration solves ``(V'V + 2 n lambda2 J*) a = V'Y`` for the current
    quadratic surrogate, halving the step if the criterion would increase.
    """
    L, m, n = data.n_basis, data.X.shape[1], data.n
    cfg = PenaltyConfig(0.0, lambda2, variant="Spline")
    Js = np.zeros((m, m))
    Js[:L, :L] = J
    alpha = np.zeros(m) if alpha0 is None else np.array(alpha0, dtype=float)

    def crit(ll, a):
        return -ll / n + lambda2 * float(a[:L] @ J @ a[:L])

    ll, g, H = value_grad_hess(data, alpha)
    obj = crit(ll, alpha)
    trace = [obj]
    converged, jitter = False, 0.0
    it = 0
    for it in range(1, options.smooth_max_iter + 1):
        G, c = gram_surrogate(H, g, alpha, n, lambda2, Js)
        cand, eps = _solve_spd(G, c)
        jitter = max(jitter, eps)
        step = cand - alpha
        for _ in range(options.max_halvings + 1):
            new = alpha + step
            ll_new = logpl(data, new)
            obj_new = crit(ll_new, new)
            if np.isfinite(obj_new) and obj_new <= obj + 1e-12 * abs(obj):
                break
            step = 0.5 * step
        else:
            converged = True  # no descent direction left at this precision
            break
        change = np.max(np.abs(new - alpha))
        alpha, obj = new, obj_new
        trace.append(obj)
        if change < options.smooth_tol:
            converged = True
            break
        ll, g, H = value_grad_hess(data, alpha)
    ll = logpl(data, alpha)
    return FitResult(alpha, L, cfg, converged, it, crit(ll, alpha), ll, trace, jitter=jitter)


def _outer(data: DesignedData, config: PenaltyConfig, J: np.ndarray, groups,
           alpha0: np.ndarray, options: SolverOptions) -> FitResult:
    L, m, n = data.n_basis, data.X.shape[1], data.n
    Js = np.zeros((m, m))
    Js[:L, :L] = J
    lam2 = config.lambda2 if config.variant in _SMOOTH else 0.0
    alpha = np.array(alpha0, dtype=float)
    ll, g, H = value_grad_hess(data, alpha)
    obj = penalized_objective(data, alpha, config, J, groups, ll)
    trace = [obj]
    mu = None
    xi = np.zeros(m)
    converged = False
    it = 0
    for it in range(1, options.outer_max_iter + 1):
        b = alpha[:L]
        if config.bridge:
            mu, xi_b = update_group_weights(b, config.lambda1, config.gamma, groups)
        else:
            xi_b = np.full(L, config.lambda1)
        xi = np.concatenate((xi_b, np.zeros(m - L)))
        G, c = gram_surrogate(H, g, alpha, n, lam2, Js)
        cand, _ = cd_gram(G, c, xi, alpha, options.cd_tol, options.cd_max_sweeps)
        step = cand - alpha
        for _ in range(options.max_halvings + 1):
            new = alpha + step
            ll_new = logpl(data, new)
            obj_new = penalized_objective(data, new, config, J, groups, ll_new)
            if np.isfinite(obj_new) and obj_new <= obj + 1e-12 * abs(obj):
                break
            step = 0.5 * step
        else:
            converged = True
            break
        change = np.max(np.abs(new - alpha))
        alpha, obj = new, obj_new
        trace.append(obj)
        if change < options.outer_tol:
            converged = True
            break
        ll, g, H = value_grad_hess(data, alpha)
    ll = logpl(data, alpha)
    return FitResult(alpha, L, config, converged, it,
                     penalized_objective(data, alpha, config, J, groups, ll), ll, trace,
                     mu=mu, xi=xi[:L])


def fit(data: DesignedData, config: PenaltyConfig, J: np.ndarray, groups, n_starts: int = 5,
        seed=None, init: FitResult | np.ndarray | None = None,
        options: SolverOptions = SolverOptions()) -> FitResult:
    """Fit one penalty variant at fixed tuning parameters.

    Parameters
    ----------
    data : DesignedData
    config : PenaltyConfig
    J : ndarray
        Roughness matrix of the basis.
    groups : list of index arrays
        Overlapping coefficient groups (``basis.groups()``).
    n_starts : int
        Number of starting points: the smoothness-only fit plus
        ``n_starts - 1`` Gaussian perturbations of it. The start reaching the
        smallest penalized criterion wins.
    seed : int or Generator, optional
        Seeds the perturbations.
    init : FitResult or ndarray, optional
        Precomputed smoothness-only fit at ``config.lambda2`` (reused along
        a tuning grid).
    """
    lam2 = config.lambda2 if config.variant in _SMOOTH else 0.0
    if isinstance(init, FitResult):
        smooth = init
    elif init is not None:
        smooth = fit_smooth(data, lam2, J, init, options)
    else:
        smooth = fit_smooth(data, lam2, J, None, options)
    if config.variant == "Spline":
        return FitResult(smooth.alpha, smooth.n_basis, config, smooth.converged, smooth.n_iter,
                         smooth.objective, smooth.loglik, smooth.trace, jitter=smooth.jitter)
    alpha0 = smooth.alpha
    starts = [alpha0]
    if n_starts > 1:
        rng = np.random.default_rng(seed)
        sd = 0.5 * np.max(np.abs(alpha0))
        starts += [alpha0 + rng.normal(0.0, sd, alpha0.size) for _ in range(n_starts - 1)]
    best = None
    for k, a0 in enumerate(starts):
        res = _outer(data, config, J, groups, a0, options)
        res.start = k
        res.jitter = smooth.jitter
        if best is None or (not res.converged, res.objective) < (not best.converged, best.objective):
            best = res
    return best
