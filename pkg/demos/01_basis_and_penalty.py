"""B-spline basis, roughness penalty and the groups behind buffer selection.

A cubic basis with 26 equally spaced inner knots has 30 functions. Each
inter-knot interval is covered by exactly four of them; those four form the
group whose joint zeroing switches the coefficient function off on that
interval.
"""
import numpy as np

from funbuffer.basis import BSplineBasis, roughness_matrix

basis = BSplineBasis(degree=3, n_inner=26)
print(f"{basis.n_basis} basis functions, {basis.n_intervals} intervals")

s = np.linspace(0, 1, 501)
B = basis.evaluate(s)
print("partition of unity, worst deviation:", np.abs(B.sum(axis=1) - 1).max())

groups = basis.groups()
print("interval 0 is controlled by coefficients", groups[0].tolist())
print("interval 10 is controlled by coefficients", groups[10].tolist())

pm = roughness_matrix(basis)
J = pm.J
# Constants and straight lines have no curvature, so they are free under J.
line = np.array([basis.t[k + 1:k + 4].mean() for k in range(basis.n_basis)])
print("b'Jb for a constant:", float(np.ones(30) @ J @ np.ones(30)))
print("b'Jb for the identity line:", float(line @ J @ line))
wiggle = np.sin(8 * np.pi * line)
print("b'Jb for sin(8 pi s):", round(float(wiggle @ J @ wiggle), 1))
print("rank of the penalty square root D:", pm.D.shape[0], "of", basis.n_basis)

# Irregular knots on a physical distance scale, as for ring buffers in metres.
rings = BSplineBasis(3, domain=(90.0, 2100.0), knots=[150, 270, 510, 990, 1500])
print("physical-domain intervals:", [rings.interval(j) for j in range(rings.n_intervals)])
