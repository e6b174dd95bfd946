"""Breslow partial likelihood with strata, and its quadratic surrogate.

The fitting algorithm never minimises the partial likelihood directly: at
each step it replaces it with a least-squares problem whose Gram matrix is
the Hessian. This script shows the pieces on a toy dataset.
"""
import numpy as np

from funbuffer.coxcore import grad_hess, logpl, surrogate
from funbuffer.survdata import DesignedData

rng = np.random.default_rng(1)
n = 200
X = rng.normal(size=(n, 3))
true = np.array([0.8, -0.5, 0.0])
t_fail = rng.exponential(np.exp(-X @ true))
t_cens = rng.exponential(2.0, n)
time = np.round(np.minimum(t_fail, t_cens), 2)  # rounding creates tied times
event = (t_fail <= t_cens).astype(float)
strata = rng.integers(0, 2, n)
data = DesignedData(X[:, :2], X[:, 2:], time, event, strata)

print("events:", int(event.sum()), "tied times:", n - np.unique(time).size)
alpha = np.zeros(3)
for it in range(6):
    g, H = grad_hess(data, alpha)
    print(f"iteration {it}: log partial likelihood {logpl(data, alpha):.4f}")
    alpha = alpha - np.linalg.solve(H, g)
print("Newton estimate:", np.round(alpha, 3), "truth:", true)

q = surrogate(data, alpha, 0.0, np.eye(2))
print("surrogate reproduces the Hessian:", np.allclose(q.V.T @ q.V, grad_hess(data, alpha)[1]))
