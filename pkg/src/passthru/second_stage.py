"""Regressions of estimated pass-throughs on log openness, pooled and within.

Six standard specifications: each of the three openness measures, with and
without country fixed effects. The printed layout always carries a constant;
under fixed effects that slot reports the grand mean of the country effects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from passthru.errors import PassthruError
from passthru.mg_panel import PassThroughPanel
from passthru.regression_core import (
    DegenerateVarianceError,
    DesignMatrix,
    TooFewRowsError,
    ols_fit,
    r2_components,
    robust_cov,
    within_transform,
)

COVARIATE_LABELS = {
    "kof": "ln (globalisation index)",
    "em6": "ln (EM-6 import penetration)",
    "em10": "ln (EM-10 import penetration)",
}

TABLE5_ORDER = (
    ("kof", False), ("kof", True),
    ("em6", False), ("em6", True),
    ("em10", False), ("em10", True),
)


class SecondStageError(PassthruError):
    pass


class NonPositiveCovariateError(SecondStageError):
    pass


@dataclass(frozen=True)
class SecondStageResult:
    covariate: str
    label: str
    coefficient: float
    se: float
    constant: float
    fe: bool
    n: int
    n_countries: int
    r2: float | None = None
    r2_within: float | None = None
    r2_between: float | None = None


def second_stage_fit(panel: PassThroughPanel, covariate: str, fe: bool = False) -> SecondStageResult:
    """Regress pass-through estimates on the log of one openness covariate.

    Rows missing the covariate are dropped first; remaining values must be
    strictly positive. Robust (HC1) standard error on the slope.
    """
    if covariate not in COVARIATE_LABELS:
        raise SecondStageError(f"unknown covariate {covariate!r}")
    rows = [r for r in panel.rows if r.covariate(covariate) is not None]
    n = len(rows)
    if n < 3:
        raise TooFewRowsError(f"{covariate}: only {n} rows with the covariate observed")
    raw = np.array([r.covariate(covariate) for r in rows])
    bad = np.nonzero(raw <= 0.0)[0]
    if bad.size:
        r0 = rows[int(bad[0])]
        raise NonPositiveCovariateError(
            f"{covariate}: non-positive value for ({r0.country}, {r0.decade})"
        )
    x = np.log(raw)
    y = np.array([r.passthrough for r in rows])
    labels = tuple((r.country, r.decade) for r in rows)
    countries = [r.country for r in rows]
    n_countries = len(set(countries))
    col = f"ln_{covariate}"

    if not fe:
        design = DesignMatrix(
            x=np.column_stack([np.ones(n), x]),
            y=y,
            columns=("const", col),
            row_labels=labels,
        )
        fit = ols_fit(design)
        rc = robust_cov(fit, design)
        return SecondStageResult(
            covariate=covariate,
            label=COVARIATE_LABELS[covariate],
            coefficient=fit.coef(col),
            se=math.sqrt(rc[1, 1]),
            constant=fit.coef("const"),
            fe=False,
            n=n,
            n_countries=n_countries,
            r2=fit.r2,
        )

    counts: dict[str, int] = {}
    for c in countries:
        counts[c] = counts.get(c, 0) + 1
    if max(counts.values()) < 2:
        raise DegenerateVarianceError("within (no country observed twice)")

    design = DesignMatrix(x=x[:, None], y=y, columns=(col,), row_labels=labels)
    demeaned = within_transform(design, countries)
    if demeaned.k == 0:
        raise DegenerateVarianceError("within (covariate constant inside every country)")
    fit = ols_fit(demeaned)
    rc = robust_cov(fit, demeaned)
    slope = fit.coef(col)

    # grand mean of the per-country effects implied by the within slope
    uniq = list(dict.fromkeys(countries))
    alphas = []
    for c in uniq:
        mask = [i for i, cc in enumerate(countries) if cc == c]
        alphas.append(float(y[mask].mean() - slope * x[mask].mean()))
    r2_within, r2_between = r2_components(fit, design, countries)
    return SecondStageResult(
        covariate=covariate,
        label=COVARIATE_LABELS[covariate],
        coefficient=slope,
        se=math.sqrt(rc[0, 0]),
        constant=float(np.mean(alphas)),
        fe=True,
        n=n,
        n_countries=n_countries,
        r2_within=r2_within,
        r2_between=r2_between,
    )


def table5_results(panel: PassThroughPanel) -> tuple[SecondStageResult, ...]:
    """The six standard columns, ordered covariate-major, pooled before FE."""
    return tuple(second_stage_fit(panel, cov, fe) for cov, fe in TABLE5_ORDER)
