"""Mean-group estimation for dynamic heterogeneous panels.

Each country gets its own time-series OLS; cross-country averages of the
country coefficients form the panel estimate, with standard errors from the
nonparametric cross-country dispersion. Also extracts per-country-per-decade
pass-through coefficients joined with decade covariates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import chi2

from passthru.errors import PassthruError
from passthru.panel_data import (
    DecadeWindow,
    EmptyWindowError,
    PanelDataset,
    TransformSpec,
    apply_transform,
    window,
)
from passthru.regression_core import (
    DesignMatrix,
    OlsFit,
    SingularDesignError,
    ols_fit,
    within_transform,
)

ROLES = ("lag_dep", "cost", "level", "interaction", "control")


class MgError(PassthruError):
    pass


class UnknownCountryError(MgError):
    pass


class TooFewCountriesError(MgError):
    pass


class NearUnitRootError(MgError):
    pass


class SingularCovarianceError(MgError):
    pass


@dataclass(frozen=True)
class Term:
    """One named series in a model, built by a transform, tagged by its role."""

    name: str
    transform: TransformSpec
    role: str = "control"

    def __post_init__(self):
        if not self.name:
            raise MgError("term needs a name")
        if self.role not in ROLES:
            raise MgError(f"unknown term role {self.role!r}")


@dataclass(frozen=True)
class ModelSpec:
    """A per-country regression recipe.

    Auxiliaries are materialized (so interactions can reference them) but are
    not regressors themselves. min_obs defaults to k + 3, leaving at least
    three residual degrees of freedom inside a decade window.
    """

    dependent: Term
    regressors: tuple[Term, ...]
    auxiliaries: tuple[Term, ...] = ()
    include_constant: bool = True
    min_obs: int | None = None

    def __post_init__(self):
        names = [self.dependent.name] + [t.name for t in self.regressors]
        if len(set(names)) != len(names):
            raise MgError("dependent and regressor names must be unique")
        if sum(1 for t in self.regressors if t.role == "lag_dep") > 1:
            raise MgError("at most one lagged-dependent regressor")
        if self.min_obs is not None and self.min_obs < self.k + 2:
            raise MgError(f"min_obs must be >= k + 2 = {self.k + 2}")

    @property
    def k(self) -> int:
        return len(self.regressors) + (1 if self.include_constant else 0)

    @property
    def min_obs_effective(self) -> int:
        return self.min_obs if self.min_obs is not None else self.k + 3

    def slot(self, role: str) -> str | None:
        """Name of the first regressor carrying `role`, if any."""
        for t in self.regressors:
            if t.role == role:
                return t.name
        return None

    @property
    def design_columns(self) -> tuple[str, ...]:
        names = tuple(t.name for t in self.regressors)
        return ("const", *names) if self.include_constant else names


def build_passthrough_spec(
    price_var: str = "cpi",
    cost_var: str = "ulc",
    controls: Sequence[str] = (),
    with_globalisation: bool = False,
    with_lagged_inflation: bool = False,
    globalisation_var: str = "kof",
    include_constant: bool = True,
    min_obs: int | None = None,
) -> ModelSpec:
    """Dynamic pass-through design: inflation on its own lag and cost growth.

    Optional pieces add the globalisation level plus its interaction with cost
    growth, and/or the interaction of cost growth with inflation lagged twice
    (the lag reduces endogeneity). Interaction inputs are built on the full
    series, before any decade windowing.
    """
    dep = Term(f"dln_{price_var}", TransformSpec.log_diff(price_var))
    regs: list[Term] = [
        Term(f"{dep.name}_lag1", TransformSpec.lag(dep.name, 1), role="lag_dep"),
        Term(f"dln_{cost_var}", TransformSpec.log_diff(cost_var), role="cost"),
    ]
    aux: list[Term] = []
    for ctrl in controls:
        regs.append(Term(ctrl, TransformSpec.identity(ctrl), role="control"))
    if with_globalisation:
        regs.append(Term(globalisation_var, TransformSpec.identity(globalisation_var), role="level"))
        regs.append(
            Term(
                f"dln_{cost_var}_x_{globalisation_var}",
                TransformSpec.product(f"dln_{cost_var}", globalisation_var),
                role="interaction",
            )
        )
    if with_lagged_inflation:
        lag2 = Term(f"{dep.name}_lag2", TransformSpec.lag(dep.name, 2))
        aux.append(lag2)
        regs.append(
            Term(
                f"dln_{cost_var}_x_{lag2.name}",
                TransformSpec.product(f"dln_{cost_var}", lag2.name),
                role="interaction",
            )
        )
    return ModelSpec(
        dependent=dep,
        regressors=tuple(regs),
        auxiliaries=tuple(aux),
        include_constant=include_constant,
        min_obs=min_obs,
    )


def materialize_design(ds: PanelDataset, spec: ModelSpec) -> PanelDataset:
    """Add every series the spec needs; names already present are reused."""
    out = ds
    for term in (spec.dependent, *spec.auxiliaries, *spec.regressors):
        if term.name in out.variables:
            continue
        out = apply_transform(out, term.transform, term.name)
    return out


@dataclass(frozen=True, eq=False)
class CountryFit:
    country: str
    columns: tuple[str, ...]
    coefficients: np.ndarray | None
    n_obs: int
    sigma: float
    ssr: float
    dof: int
    usable: bool
    reason: str | None = None

    def coef(self, name: str) -> float:
        if self.coefficients is None:
            raise MgError(f"{self.country}: no coefficients ({self.reason})")
        return float(self.coefficients[self.columns.index(name)])


def fit_country(ds: PanelDataset, spec: ModelSpec, country: str) -> CountryFit:
    """OLS on one country's complete rows; short or singular samples come back unusable."""
    if country not in ds.countries:
        raise UnknownCountryError(country)
    needed = [spec.dependent.name] + [t.name for t in spec.regressors]
    rows = ds.complete_rows(needed, country)
    n = len(rows)
    if n < spec.min_obs_effective:
        return CountryFit(country, (), None, n, math.nan, math.nan, 0, False, "TooFewRows")

    y = np.array([vals[0] for _, vals in rows])
    x_cols = [np.array([vals[j + 1] for _, vals in rows]) for j in range(len(spec.regressors))]
    if spec.include_constant:
        x_cols.insert(0, np.ones(n))
    design = DesignMatrix(
        x=np.column_stack(x_cols),
        y=y,
        columns=spec.design_columns,
        row_labels=tuple((country, yr) for yr, _ in rows),
    )
    try:
        fit = ols_fit(design)
    except SingularDesignError:
        return CountryFit(country, (), None, n, math.nan, math.nan, 0, False, "SingularDesign")
    return CountryFit(
        country=country,
        columns=fit.columns,
        coefficients=fit.coefficients,
        n_obs=n,
        sigma=fit.sigma,
        ssr=fit.ssr,
        dof=fit.dof,
        usable=True,
    )


@dataclass(frozen=True, eq=False)
class MgResult:
    columns: tuple[str, ...]
    coefficients: np.ndarray
    covariance: np.ndarray
    se: np.ndarray
    n_countries: int
    total_obs: int
    sigma_pooled: float
    fits: tuple[CountryFit, ...] = ()

    def coef(self, name: str) -> float:
        return float(self.coefficients[self.columns.index(name)])

    def se_of(self, name: str) -> float:
        return float(self.se[self.columns.index(name)])


def mean_group(fits: Iterable[CountryFit]) -> MgResult:
    """Average usable country fits; SEs from cross-country coefficient dispersion.

    covariance = (1 / (N (N-1))) * sum_i (theta_i - mean)(theta_i - mean)'.
    Pooled sigma stacks residual variation: sqrt(sum SSR_i / sum dof_i).
    Sums are compensated, so reordering countries changes nothing, bit for bit.
    """
    fits = tuple(fits)
    usable = [f for f in fits if f.usable]
    n = len(usable)
    if n < 2:
        raise TooFewCountriesError(f"need >= 2 usable countries, have {n}")
    columns = usable[0].columns
    if any(f.columns != columns for f in usable):
        raise MgError("usable fits disagree on design columns")

    matrix = np.vstack([f.coefficients for f in usable])
    k = matrix.shape[1]
    theta = np.array([math.fsum(matrix[:, j]) for j in range(k)]) / n
    dev = matrix - theta
    cov = np.empty((k, k))
    for a in range(k):
        for b in range(a, k):
            cov[a, b] = cov[b, a] = math.fsum(dev[:, a] * dev[:, b]) / (n * (n - 1))
    total_dof = sum(f.dof for f in usable)
    sigma_pooled = (
        math.sqrt(math.fsum(f.ssr for f in usable) / total_dof) if total_dof > 0 else math.nan
    )
    return MgResult(
        columns=columns,
        coefficients=theta,
        covariance=cov,
        se=np.sqrt(np.diag(cov)),
        n_countries=n,
        total_obs=sum(f.n_obs for f in usable),
        sigma_pooled=sigma_pooled,
        fits=fits,
    )


def long_run_effect(r: MgResult, cost_slot: str, rho_slot: str) -> tuple[float, float]:
    """Cumulative effect cost/(1 - persistence), with a delta-method SE."""
    i_rho = r.columns.index(rho_slot)
    i_cost = r.columns.index(cost_slot)
    rho = float(r.coefficients[i_rho])
    lam = float(r.coefficients[i_cost])
    denom = 1.0 - rho
    if abs(denom) <= 1e-6:
        raise NearUnitRootError(f"persistence {rho} too close to 1")
    value = lam / denom
    grad = np.array([lam / denom**2, 1.0 / denom])
    sub = r.covariance[np.ix_([i_rho, i_cost], [i_rho, i_cost])]
    var = float(grad @ sub @ grad)
    return value, math.sqrt(max(var, 0.0))


def wald_joint(r: MgResult, slots: Sequence[str] | None = None) -> tuple[float, int, float]:
    """Chi-square test that the selected coefficients are jointly zero.

    Defaults to every non-constant slope, one statistic per results column.
    """
    if slots is None:
        slots = [c for c in r.columns if c != "const"]
    slots = list(slots)
    if "const" in slots:
        raise MgError("the constant is not part of a joint slope test")
    if not slots:
        raise MgError("empty slot subset")
    idx = [r.columns.index(s) for s in slots]
    theta = r.coefficients[idx]
    v = r.covariance[np.ix_(idx, idx)]
    sv = np.linalg.svd(v, compute_uv=False)
    if sv.size == 0 or sv[-1] <= 1e-12 * sv[0] or sv[0] == 0.0:
        raise SingularCovarianceError(f"restricted covariance for {slots} is singular")
    stat = float(theta @ np.linalg.solve(v, theta))
    dof = len(idx)
    return stat, dof, float(chi2.sf(stat, dof))


@dataclass(frozen=True)
class PassThroughRow:
    country: str
    decade: str
    passthrough: float
    kof: float | None
    em6: float | None
    em10: float | None
    avg_inflation: float | None

    def covariate(self, name: str) -> float | None:
        return getattr(self, name)


@dataclass(frozen=True)
class Exclusion:
    country: str
    decade: str
    reason: str


@dataclass(frozen=True)
class PassThroughPanel:
    """Estimated pass-through per (country, decade) with decade covariates."""

    rows: tuple[PassThroughRow, ...]
    exclusions: tuple[Exclusion, ...] = ()

    def __len__(self) -> int:
        return len(self.rows)


def estimate_decade_passthroughs(
    ds: PanelDataset,
    spec: ModelSpec,
    windows: Sequence[DecadeWindow],
    decade_data: PanelDataset | None = None,
    exclude: Sequence[str] = (),
    covariates: Sequence[str] = ("kof", "em6", "em10"),
) -> PassThroughPanel:
    """Fit the spec per (country, decade); keep the cost coefficient of usable fits.

    Covariates come verbatim from the decade-keyed dataset when present, and
    fall back to decade averages of annual series. Unusable or excluded
    country-decades land in the exclusion report, never as silent gaps.
    """
    cost = spec.slot("cost")
    if cost is None:
        raise MgError("spec has no cost slot to extract a pass-through from")
    materialized = materialize_design(ds, spec)
    excluded = set(exclude)
    rows: list[PassThroughRow] = []
    exclusions: list[Exclusion] = []

    for w in windows:
        try:
            sub = window(materialized, w)
        except EmptyWindowError:
            exclusions.append(Exclusion("*", w.label, "EmptyWindow"))
            continue
        for country in materialized.countries:
            if country in excluded:
                exclusions.append(Exclusion(country, w.label, "ExcludedByConfig"))
                continue
            fit = fit_country(sub, spec, country)
            if not fit.usable:
                exclusions.append(Exclusion(country, w.label, fit.reason or "unusable"))
                continue
            values: dict[str, float | None] = {}
            for var in covariates:
                val = None
                if decade_data is not None and var in decade_data.variables:
                    val = decade_data.value(var, country, w.start_year)
                if val is None and var in materialized.variables:
                    obs = [
                        v for yr in sub.years
                        if (v := materialized.value(var, country, yr)) is not None
                    ]
                    if obs:
                        val = sum(obs) / len(obs)
                values[var] = val
            dep_obs = [
                v for yr in sub.years
                if (v := sub.value(spec.dependent.name, country, yr)) is not None
            ]
            avg_inflation = sum(dep_obs) / len(dep_obs) if dep_obs else None
            rows.append(
                PassThroughRow(
                    country=country,
                    decade=w.label,
                    passthrough=fit.coef(cost),
                    kof=values.get("kof"),
                    em6=values.get("em6"),
                    em10=values.get("em10"),
                    avg_inflation=avg_inflation,
                )
            )
    return PassThroughPanel(tuple(rows), tuple(exclusions))


def pooled_fixed_effects(ds: PanelDataset, spec: ModelSpec) -> OlsFit:
    """Within (entity-demeaned) OLS pooling all countries, for comparison with MG."""
    needed = [spec.dependent.name] + [t.name for t in spec.regressors]
    ys, xs, labels, groups = [], [], [], []
    for country in ds.countries:
        for year, vals in ds.complete_rows(needed, country):
            ys.append(vals[0])
            xs.append(vals[1:])
            labels.append((country, year))
            groups.append(country)
    if len(ys) < len(spec.regressors) + 2:
        raise TooFewCountriesError("not enough pooled rows")
    design = DesignMatrix(
        x=np.array(xs),
        y=np.array(ys),
        columns=tuple(t.name for t in spec.regressors),
        row_labels=tuple(labels),
    )
    return ols_fit(within_transform(design, groups))
