"""Cox partial likelihood on the combined design ``(Phi | Z)``.

Ties follow the Breslow convention: every subject with ``T_j >= T_i`` is in
the risk set of an event at ``T_i``. Strata contribute independent terms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .survdata import DesignedData

__all__ = [
    "NumericalError",
    "logpl",
    "gradient",
    "grad_hess",
    "value_grad_hess",
    "QuadSurrogate",
    "surrogate",
    "gram_surrogate",
    "chol_jitter",
]

JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class NumericalError(RuntimeError):
    """A factorisation failed even after diagonal jitter."""


def logpl(data: DesignedData, alpha: np.ndarray) -> float:
    """Log partial likelihood ``l_n(alpha)`` with ``eta = Phi b + Z theta``."""
    eta = data.X @ alpha
    total = 0.0
    for order, last in data.blocks:
        e = eta[order]
        ev = data.event[order] > 0
        # running log-sum-exp: no risk set underflows however wide the spread of eta
        log_S0 = np.logaddexp.accumulate(e)[last]
        total += float(np.sum(e[ev] - log_S0[ev]))
    return total


def _terms(data: DesignedData, alpha: np.ndarray, hessian: bool):
    X = data.X
    eta = X @ alpha
    m = X.shape[1]
    val = 0.0
    g = np.zeros(m)
    H = np.zeros((m, m)) if hessian else None
    for order, last in data.blocks:
        x = X[order]
        e = eta[order]
        d = data.event[order]
        c = e.max()
        w = np.exp(e - c)
        S0 = np.cumsum(w)[last]
        S1 = np.cumsum(w[:, None] * x, axis=0)[last]
        ev = d > 0
        xbar = S1[ev] / S0[ev, None]
        val += float(np.sum(e[ev] - c - np.log(S0[ev])))
        g += xbar.sum(axis=0) - x[ev].sum(axis=0)
        if hessian:
            # sum_i d_i S2_i / S0_i = sum_j w_j x_j x_j^T * sum_{i: last_i >= j} d_i / S0_i
            a = np.zeros(len(order))
            np.add.at(a, last[ev], 1.0 / S0[ev])
            cw = w * np.cumsum(a[::-1])[::-1]
            H += (x * cw[:, None]).T @ x - xbar.T @ xbar
    if hessian:
        H = 0.5 * (H + H.T)
    return val, g, H


def gradient(data: DesignedData, alpha: np.ndarray) -> np.ndarray:
    """Gradient of the negated log partial likelihood ``-l_n``."""
    return _terms(data, np.asarray(alpha, dtype=float), False)[1]


def grad_hess(data: DesignedData, alpha: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and Hessian of ``-l_n`` at ``alpha``."""
    _, g, H = _terms(data, np.asarray(alpha, dtype=float), True)
    return g, H


def value_grad_hess(data: DesignedData, alpha: np.ndarray):
    """``(l_n, grad(-l_n), hess(-l_n))`` in one pass."""
    return _terms(data, np.asarray(alpha, dtype=float), True)


def chol_jitter(A: np.ndarray, jitters=JITTERS) -> tuple[np.ndarray, float]:
    """Upper Cholesky factor of ``A + eps I``, escalating ``eps`` relative to the diagonal scale."""
    scale = max(float(np.mean(np.abs(np.diag(A)))), 1e-300)
    for eps in jitters:
        try:
            U = linalg.cholesky(A + eps * scale * np.eye(A.shape[0]), lower=False)
        except linalg.LinAlgError:
            continue
        if np.all(np.isfinite(U)):
            return U, eps * scale
    raise NumericalError(
        "Hessian is numerically singular even after jitter; "
        "use a stronger smoothness penalty or fewer knots")


@dataclass(frozen=True)
class QuadSurrogate:
    """Least-squares form of the second-order Taylor model of ``-l_n``.

    ``0.5 * ||Y - V a||^2`` matches ``-l_n`` at ``alpha0`` up to a constant
    in value, gradient and Hessian. ``Ybar``/``Vbar`` append the rows
    ``sqrt(2 n lambda2) D`` acting on the spline block.
    """

    V: np.ndarray
    Y: np.ndarray
    alpha0: np.ndarray
    Ybar: np.ndarray
    Vbar: np.ndarray
    jitter: float


def surrogate(data: DesignedData, alpha0: np.ndarray, lambda2: float, D: np.ndarray) -> QuadSurrogate:
    alpha0 = np.asarray(alpha0, dtype=float)
    g, H = grad_hess(data, alpha0)
    V, eps = chol_jitter(H)
    Hj = H + eps * np.eye(H.shape[0])
    Y = linalg.solve_triangular(V, Hj @ alpha0 - g, trans="T", lower=False)
    if lambda2 > 0 and D.shape[0]:
        L = data.n_basis
        extra = np.zeros((D.shape[0], V.shape[1]))
        extra[:, :L] = np.sqrt(2 * data.n * lambda2) * D
        Vbar = np.vstack((V, extra))
        Ybar = np.concatenate((Y, np.zeros(D.shape[0])))
    else:
        Vbar, Ybar = V, Y
    return QuadSurrogate(V, Y, alpha0, Ybar, Vbar, eps)


def gram_surrogate(H: np.ndarray, g: np.ndarray, alpha0: np.ndarray, n: int,
                   lambda2: float, J_star: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(Vbar^T Vbar / n, Vbar^T Ybar / n)`` without forming the Cholesky factor."""
    G = (H + 2.0 * n * lambda2 * J_star) / n
    c = (H @ alpha0 - g) / n
    return G, c
