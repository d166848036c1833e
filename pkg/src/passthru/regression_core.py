"""Dense least squares: QR fit, HC1 sandwich covariance, within transform, R2 parts.

Solves through an orthogonal decomposition on column-norm equilibrated data,
never through raw normal equations; decade-window designs with interaction
columns can be badly conditioned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np
import scipy.linalg

from passthru.errors import PassthruError

# Relative singular-value cutoff below which a design counts as singular.
SV_RTOL = 1e-10


class RegressionError(PassthruError):
    pass


class SingularDesignError(RegressionError):
    def __init__(self, columns: Sequence[str], detail: str = "linearly dependent columns"):
        super().__init__(f"{detail}: {list(columns)}")
        self.columns = tuple(columns)


class TooFewRowsError(RegressionError):
    pass


class ShapeMismatchError(RegressionError):
    pass


class UnmappedRowError(RegressionError):
    pass


class DegenerateVarianceError(RegressionError):
    def __init__(self, component: str):
        super().__init__(f"zero variance in the {component} component")
        self.component = component


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Fully observed regression data: rows x named columns plus a response.

    `absorbed_dof` counts parameters absorbed upstream (entity means after a
    within transform); it reduces residual degrees of freedom downstream.
    """

    x: np.ndarray
    y: np.ndarray
    columns: tuple[str, ...]
    row_labels: tuple[Hashable, ...] = ()
    absorbed_dof: int = 0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 2:
            raise ShapeMismatchError("x must be a 2-d array")
        n, k = x.shape
        if y.shape != (n,):
            raise ShapeMismatchError(f"y has shape {y.shape}, expected ({n},)")
        columns = tuple(self.columns)
        if len(columns) != k:
            raise ShapeMismatchError(f"{len(columns)} column names for {k} columns")
        if len(set(columns)) != k:
            raise RegressionError("column names must be unique")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise RegressionError("design must not contain missing or non-finite cells")
        labels = tuple(self.row_labels) if self.row_labels else tuple(range(n))
        if len(labels) != n:
            raise ShapeMismatchError(f"{len(labels)} row labels for {n} rows")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "row_labels", labels)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def k(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True, eq=False)
class OlsFit:
    columns: tuple[str, ...]
    coefficients: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray
    n: int
    k: int
    dof: int
    sigma: float
    ssr: float
    r2: float
    cov_classical: np.ndarray
    xtx_inv: np.ndarray
    has_constant: bool

    def coef(self, name: str) -> float:
        return float(self.coefficients[self.columns.index(name)])

    def se_classical(self, name: str) -> float:
        i = self.columns.index(name)
        return float(math.sqrt(self.cov_classical[i, i]))


def _dependent_columns(xe: np.ndarray, columns: tuple[str, ...]) -> tuple[str, ...]:
    """Name the columns a rank-revealing QR flags as redundant."""
    _, r, piv = scipy.linalg.qr(xe, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        return columns
    rank = int(np.sum(diag > diag[0] * SV_RTOL))
    return tuple(columns[j] for j in sorted(piv[rank:]))


def ols_fit(d: DesignMatrix) -> OlsFit:
    """Least-squares fit via QR on the equilibrated design."""
    x, y = d.x, d.y
    n, k = x.shape
    if n < k:
        raise TooFewRowsError(f"{n} rows cannot identify {k} coefficients")
    if k == 0:
        raise RegressionError("design has no columns")

    norms = np.sqrt(np.einsum("ij,ij->j", x, x))
    dead = [c for c, s in zip(d.columns, norms) if s == 0.0]
    if dead:
        raise SingularDesignError(dead, "all-zero columns")
    xe = x / norms

    sv = np.linalg.svd(xe, compute_uv=False)
    if sv[-1] <= SV_RTOL * sv[0]:
        raise SingularDesignError(_dependent_columns(xe, d.columns))

    q, r = np.linalg.qr(xe)
    coef = scipy.linalg.solve_triangular(r, q.T @ y) / norms
    fitted = x @ coef
    resid = y - fitted
    ssr = float(resid @ resid)

    dof = n - k - d.absorbed_dof
    sigma = math.sqrt(ssr / dof) if dof > 0 else math.nan

    r_inv = scipy.linalg.solve_triangular(r, np.eye(k))
    xtx_inv = (r_inv @ r_inv.T) / np.outer(norms, norms)
    xtx_inv = (xtx_inv + xtx_inv.T) / 2.0

    has_constant = bool(
        any(np.ptp(x[:, j]) == 0.0 and x[0, j] != 0.0 for j in range(k))
    )
    centered = y - y.mean() if has_constant else y
    tss = float(centered @ centered)
    if tss > 0.0:
        r2 = 1.0 - ssr / tss
        if has_constant:
            r2 = min(max(r2, 0.0), 1.0)
    else:
        r2 = math.nan

    cov_classical = sigma * sigma * xtx_inv if dof > 0 else np.full((k, k), math.nan)
    return OlsFit(
        columns=d.columns,
        coefficients=coef,
        residuals=resid,
        fitted=fitted,
        n=n,
        k=k,
        dof=dof,
        sigma=sigma,
        ssr=ssr,
        r2=r2,
        cov_classical=cov_classical,
        xtx_inv=xtx_inv,
        has_constant=has_constant,
    )


def robust_cov(fit: OlsFit, d: DesignMatrix) -> np.ndarray:
    """HC1 sandwich: (n/dof) * (X'X)^-1 X' diag(e^2) X (X'X)^-1."""
    if d.x.shape != (fit.n, fit.k) or d.columns != fit.columns:
        raise ShapeMismatchError("design does not match the fit it produced")
    if fit.dof <= 0:
        raise RegressionError("no residual degrees of freedom for a covariance")
    e2 = fit.residuals ** 2
    meat = (d.x * e2[:, None]).T @ d.x
    cov = fit.xtx_inv @ meat @ fit.xtx_inv * (fit.n / fit.dof)
    return (cov + cov.T) / 2.0


def _resolve_groups(
    groups: Mapping[Hashable, Hashable] | Sequence[Hashable], labels: tuple[Hashable, ...]
) -> list[Hashable]:
    if isinstance(groups, Mapping):
        missing = [lab for lab in labels if lab not in groups]
        if missing:
            raise UnmappedRowError(f"rows without an entity: {missing[:5]}")
        return [groups[lab] for lab in labels]
    ents = list(groups)
    if len(ents) != len(labels):
        raise UnmappedRowError(f"{len(ents)} entities for {len(labels)} rows")
    return ents


def within_transform(
    d: DesignMatrix, groups: Mapping[Hashable, Hashable] | Sequence[Hashable]
) -> DesignMatrix:
    """Demean columns and response within entities (fixed-effects transform).

    Columns that demean to zero everywhere (constants, entity dummies) are
    dropped; the entity count is added to absorbed_dof so downstream sigma and
    standard errors lose the right degrees of freedom.
    """
    entities = _resolve_groups(groups, d.row_labels)
    uniq = list(dict.fromkeys(entities))
    index = {e: i for i, e in enumerate(uniq)}
    idx = np.array([index[e] for e in entities])
    counts = np.bincount(idx, minlength=len(uniq)).astype(float)

    def demean(col: np.ndarray) -> np.ndarray:
        means = np.bincount(idx, weights=col, minlength=len(uniq)) / counts
        return col - means[idx]

    xd = np.column_stack([demean(d.x[:, j]) for j in range(d.k)]) if d.k else d.x.copy()
    yd = demean(d.y)

    keep = []
    for j in range(d.k):
        scale = max(1.0, float(np.max(np.abs(d.x[:, j]))))
        if float(np.max(np.abs(xd[:, j]))) > 1e-12 * scale:
            keep.append(j)
    return DesignMatrix(
        x=xd[:, keep],
        y=yd,
        columns=tuple(d.columns[j] for j in keep),
        row_labels=d.row_labels,
        absorbed_dof=d.absorbed_dof + len(uniq),
    )


def _squared_corr(a: np.ndarray, b: np.ndarray, component: str) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = float(a @ a) * float(b @ b)
    if denom <= 0.0:
        raise DegenerateVarianceError(component)
    return float((a @ b) ** 2 / denom)


def r2_components(
    fit: OlsFit,
    d: DesignMatrix,
    groups: Mapping[Hashable, Hashable] | Sequence[Hashable],
) -> tuple[float, float]:
    """Within and between R2 of a fixed-effects fit, on the untransformed design.

    Fitted values use only the columns the within fit kept; constants absorbed
    by the transform shift neither correlation.
    """
    entities = _resolve_groups(groups, d.row_labels)
    try:
        cols = [d.columns.index(c) for c in fit.columns]
    except ValueError as exc:
        raise ShapeMismatchError(f"design lacks a fitted column: {exc}") from None
    yhat = d.x[:, cols] @ fit.coefficients

    uniq = list(dict.fromkeys(entities))
    index = {e: i for i, e in enumerate(uniq)}
    idx = np.array([index[e] for e in entities])
    counts = np.bincount(idx, minlength=len(uniq)).astype(float)
    yhat_means = np.bincount(idx, weights=yhat, minlength=len(uniq)) / counts
    y_means = np.bincount(idx, weights=d.y, minlength=len(uniq)) / counts

    r2_within = _squared_corr(yhat - yhat_means[idx], d.y - y_means[idx], "within")
    if len(uniq) < 2:
        raise DegenerateVarianceError("between")
    r2_between = _squared_corr(yhat_means, y_means, "between")
    return r2_within, r2_between
