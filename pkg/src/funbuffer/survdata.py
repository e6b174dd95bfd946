"""Right-censored survival data with ring-averaged functional exposures."""
from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .basis import BSplineBasis, DEFAULT_GRID, quadrature_grid

__all__ = [
    "DataError",
    "ExposureFunction",
    "SurvivalDataset",
    "DesignedData",
    "CsvSchema",
    "load_csv",
    "write_csv",
    "center",
    "design",
    "interpolation_matrix",
]


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class ExposureFunction:
    """Piecewise-linear exposure through ring values, constant beyond the end rings."""

    radii: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if r.ndim != 1 or r.shape != v.shape:
            raise DataError("radii and values must be 1-d arrays of equal length")
        if np.any(np.diff(r) <= 0):
            raise DataError("non-increasing radii")
        if not np.all(np.isfinite(v)):
            raise DataError("exposure values must be finite")
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "values", v)

    def __call__(self, s):
        return np.interp(s, self.radii, self.values)


@dataclass(frozen=True)
class SurvivalDataset:
    """Observed times, event flags, scalar covariates and ring exposures.

    ``exposure`` is an ``(n, R)`` matrix of ring values at ``radii``.
    """

    time: np.ndarray
    event: np.ndarray
    Z: np.ndarray
    radii: np.ndarray
    exposure: np.ndarray
    strata: np.ndarray | None = None
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float).ravel()
        event = np.asarray(self.event).ravel()
        n = time.size
        Z = np.asarray(self.Z, dtype=float)
        if Z.ndim == 1:
            Z = Z.reshape(n, -1) if Z.size else np.zeros((n, 0))
        radii = np.asarray(self.radii, dtype=float).ravel()
        X = np.asarray(self.exposure, dtype=float)
        if X.ndim == 1:
            X = X.reshape(n, -1)
        if event.shape != (n,) or Z.shape[0] != n or X.shape != (n, radii.size):
            raise DataError("time, event, Z and exposure are not row-aligned")
        if not np.all(np.isin(event, (0, 1))):
            raise DataError("event indicators must be 0 or 1")
        if np.any(~np.isfinite(time)) or np.any(time <= 0):
            raise DataError("observed times must be positive and finite")
        if event.sum() < 1:
            raise DataError("dataset has no events")
        if np.any(np.diff(radii) <= 0):
            raise DataError("non-increasing radii")
        if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(X))):
            raise DataError("covariates and exposures must be finite")
        names = tuple(self.covariate_names) or tuple(f"z{k + 1}" for k in range(Z.shape[1]))
        if len(names) != Z.shape[1]:
            raise DataError("covariate_names does not match the number of covariates")
        strata = self.strata
        if strata is not None:
            strata = np.asarray(strata).ravel()
            if strata.shape != (n,):
                raise DataError("strata must have one label per subject")
        for k, v in dict(time=time, event=event.astype(np.int8), Z=Z, radii=radii,
                         exposure=X, strata=strata, covariate_names=names).items():
            object.__setattr__(self, k, v)

    @property
    def n(self) -> int:
        return self.time.size

    @property
    def p(self) -> int:
        return self.Z.shape[1]

    def exposure_function(self, i: int) -> ExposureFunction:
        return ExposureFunction(self.radii, self.exposure[i])

    def summary(self) -> dict:
        return {
            "n": self.n,
            "p": self.p,
            "R": int(self.radii.size),
            "events": int(self.event.sum()),
            "radii": self.radii.tolist(),
            "covariates": list(self.covariate_names),
            "strata": None if self.strata is None else int(np.unique(self.strata).size),
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary())


def center(data: SurvivalDataset) -> SurvivalDataset:
    """Mean-center every covariate column and every ring of the exposure."""
    return replace(data, Z=data.Z - data.Z.mean(axis=0),
                   exposure=data.exposure - data.exposure.mean(axis=0))


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for :func:`load_csv`.

    Exposure columns are recognised by ``<exposure_prefix>@<radius>``.
    When ``covariates`` is None every remaining column is a covariate.
    """

    time: str = "time"
    event: str = "event"
    covariates: tuple[str, ...] | None = None
    exposure_prefix: str = "x"
    strata: str | None = None


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"row {row}: non-numeric value {cell!r} in column {col!r}") from None
    if not np.isfinite(v):
        raise DataError(f"row {row}: non-finite value in column {col!r}")
    return v


def load_csv(path, schema: CsvSchema | None = None) -> SurvivalDataset:
    """Read a survival dataset with ring-exposure columns from a CSV file.

    Row numbers in error messages count data rows from 1 (header excluded).
    """
    schema = schema or CsvSchema()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("empty CSV file") from None
        rows = [r for r in reader if any(c.strip() for c in r)]
    if len(set(header)) != len(header):
        dup = sorted({h for h in header if header.count(h) > 1})
        raise DataError(f"duplicate columns: {dup}")
    pat = re.compile(rf"^{re.escape(schema.exposure_prefix)}@(.+)$")
    exp_cols, radii = [], []
    for j, h in enumerate(header):
        m = pat.match(h)
        if m:
            try:
                radii.append(float(m.group(1)))
            except ValueError:
                raise DataError(f"cannot read radius from column {h!r}") from None
            exp_cols.append(j)
    if not exp_cols:
        raise DataError(f"no exposure columns named '{schema.exposure_prefix}@<radius>'")
    if np.any(np.diff(radii) <= 0):
        raise DataError("non-increasing radii in exposure columns")
    for name in (schema.time, schema.event) + ((schema.strata,) if schema.strata else ()):
        if name not in header:
            raise DataError(f"missing column {name!r}")
    reserved = {schema.time, schema.event, schema.strata} | {header[j] for j in exp_cols}
    if schema.covariates is None:
        cov = [h for h in header if h not in reserved]
    else:
        cov = list(schema.covariates)
        missing = [c for c in cov if c not in header]
        if missing:
            raise DataError(f"missing covariate columns: {missing}")
    ti, ei = header.index(schema.time), header.index(schema.event)
    ci = [header.index(c) for c in cov]
    si = header.index(schema.strata) if schema.strata else None
    n = len(rows)
    if n == 0:
        raise DataError("CSV file has no data rows")
    T = np.empty(n)
    E = np.empty(n, dtype=np.int8)
    Z = np.empty((n, len(ci)))
    X = np.empty((n, len(exp_cols)))
    S = [] if si is not None else None
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataError(f"row {r}: expected {len(header)} fields, got {len(row)}")
        cells = [c.strip() for c in row]
        for j, c in enumerate(cells):
            if c == "" or c.upper() in ("NA", "NAN"):
                raise DataError(f"row {r}: missing value in column {header[j]!r}")
        T[r - 1] = _parse_float(cells[ti], r, schema.time)
        if T[r - 1] <= 0:
            raise DataError(f"row {r}: observed time must be positive")
        ev = _parse_float(cells[ei], r, schema.event)
        if ev not in (0.0, 1.0):
            raise DataError(f"row {r}: event indicator must be 0 or 1, got {cells[ei]!r}")
        E[r - 1] = int(ev)
        for k, j in enumerate(ci):
            Z[r - 1, k] = _parse_float(cells[j], r, header[j])
        for k, j in enumerate(exp_cols):
            X[r - 1, k] = _parse_float(cells[j], r, header[j])
        if S is not None:
            S.append(cells[si])
    return SurvivalDataset(T, E, Z, np.array(radii), X,
                           strata=None if S is None else np.array(S),
                           covariate_names=tuple(cov))


def write_csv(data: SurvivalDataset, path, exposure_prefix: str = "x") -> None:
    header = ["time", "event", *data.covariate_names]
    if data.strata is not None:
        header.append("stratum")
    header += [f"{exposure_prefix}@{r:.10g}" for r in data.radii]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(data.n):
            row = [repr(float(data.time[i])), int(data.event[i]), *(repr(float(z)) for z in data.Z[i])]
            if data.strata is not None:
                row.append(data.strata[i])
            row += [repr(float(x)) for x in data.exposure[i]]
            w.writerow(row)


def interpolation_matrix(radii: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Matrix ``P`` with ``P @ values == np.interp(s, radii, values)``."""
    radii = np.asarray(radii, dtype=float)
    s = np.clip(np.asarray(s, dtype=float), radii[0], radii[-1])
    P = np.zeros((s.size, radii.size))
    if radii.size == 1:
        P[:, 0] = 1.0
        return P
    k = np.clip(np.searchsorted(radii, s, side="right") - 1, 0, radii.size - 2)
    frac = (s - radii[k]) / (radii[k + 1] - radii[k])
    rows = np.arange(s.size)
    P[rows, k] = 1.0 - frac
    P[rows, k + 1] += frac
    return P


@dataclass(frozen=True)
class DesignedData:
    """Functional design ``Phi``, covariates ``Z`` and the risk-set bookkeeping.

    ``blocks`` holds, per stratum, the subject indices sorted by decreasing
    time and the position of the last member of each tie block.
    """

    Phi: np.ndarray
    Z: np.ndarray
    time: np.ndarray
    event: np.ndarray
    strata: np.ndarray | None = None
    blocks: tuple = field(init=False, repr=False)
    X: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = self.time.shape[0]
        Phi = np.asarray(self.Phi, dtype=float).reshape(n, -1)
        Z = np.asarray(self.Z, dtype=float).reshape(n, -1)
        object.__setattr__(self, "Phi", Phi)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "event", np.asarray(self.event, dtype=float))
        object.__setattr__(self, "X", np.hstack((Phi, Z)))
        if self.strata is None:
            groups = [np.arange(n)]
        else:
            groups = [np.flatnonzero(self.strata == s) for s in np.unique(self.strata)]
        blocks = []
        for g in groups:
            order = g[np.argsort(-self.time[g], kind="stable")]
            neg = -self.time[order]
            last = np.searchsorted(neg, neg, side="right") - 1
            if self.event[order].sum() > 0:
                blocks.append((order, last))
        object.__setattr__(self, "blocks", tuple(blocks))

    @property
    def n(self) -> int:
        return self.time.shape[0]

    @property
    def n_basis(self) -> int:
        return self.Phi.shape[1]

    @property
    def p(self) -> int:
        return self.Z.shape[1]

    @property
    def order(self) -> np.ndarray:
        """Permutation sorting all subjects by decreasing observed time."""
        return np.argsort(-self.time, kind="stable")

    def restrict(self, columns: Sequence[int]) -> "DesignedData":
        """Same data keeping only the listed functional columns."""
        return DesignedData(self.Phi[:, np.asarray(columns, dtype=int)], self.Z,
                            self.time, self.event, self.strata)


def exposure_kernel(basis: BSplineBasis, radii: np.ndarray, n_grid: int = DEFAULT_GRID) -> np.ndarray:
    """``K`` with ``exposure @ K`` equal to the trapezoid design rows."""
    grid, w = quadrature_grid(basis, n_grid)
    P = interpolation_matrix(radii, grid)
    return P.T @ (w[:, None] * basis.evaluate(grid))


def design(data: SurvivalDataset, basis: BSplineBasis, n_grid: int = DEFAULT_GRID) -> DesignedData:
    """Materialise the functional design on ``basis``.

    Exposure below the first ring is held at the first ring value; a basis
    domain reaching beyond the last ring is rejected.
    """
    hi = basis.domain[1]
    if hi > data.radii[-1] + 1e-9 * max(1.0, abs(hi)):
        raise DataError(f"basis domain ends at {hi} beyond the largest radius {data.radii[-1]}")
    Phi = data.exposure @ exposure_kernel(basis, data.radii, n_grid)
    return DesignedData(Phi, data.Z, data.time, data.event, data.strata)
