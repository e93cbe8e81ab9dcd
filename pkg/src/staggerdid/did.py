"""Interaction difference-in-differences with unit random effects and time effects.

Random-effects GLS is done by quasi-demeaning: every variable, including
the constant, becomes ``v_it - theta_i * mean_i(v)``, then OLS. ``theta_i``
comes from method-of-moments variance components.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import CollinearInteraction, DegeneratePanel, InconsistentUnitValue, MissingColumn
from .panel import PanelDataset
from .regress import DesignMatrix, cluster_robust_vcov, one_way_within, solve_ols
from .results import EstimateTable


@dataclass(frozen=True)
class DidSpec:
    treatment_group: str
    treatment_status: str
    controls: tuple = ()
    include_time_fe: bool = True

    def __post_init__(self):
        object.__setattr__(self, "controls", tuple(self.controls))

    @property
    def interaction_label(self) -> str:
        return f"{self.treatment_group}*{self.treatment_status}"

    @property
    def variables(self) -> tuple:
        return (self.treatment_group, self.treatment_status) + self.controls


@dataclass(frozen=True, eq=False)
class VarianceComponents:
    sigma_u2: float
    sigma_e2: float
    obs_per_unit: np.ndarray
    sigma_u2_moment: float = float("nan")  # before flooring at zero

    @property
    def theta_per_unit(self) -> np.ndarray:
        return quasi_demeaning_theta(self.sigma_u2, self.sigma_e2, self.obs_per_unit)


def quasi_demeaning_theta(sigma_u2: float, sigma_e2: float, t_i) -> np.ndarray:
    t_i = np.asarray(t_i, dtype=np.float64)
    total = sigma_e2 + t_i * sigma_u2
    if sigma_u2 == 0.0:
        return np.zeros_like(t_i)  # also covers the all-zero variance case
    return 1.0 - np.sqrt(sigma_e2 / total)


def _regressors(data: PanelDataset, spec: DidSpec) -> tuple[np.ndarray, list]:
    cov = data.covariates
    for name in spec.variables:
        if name not in cov:
            raise MissingColumn(f"column {name!r} not in dataset")
    group = cov[spec.treatment_group]
    within_sd = one_way_within(group, data.unit)
    if np.abs(within_sd).max() > 1e-12:
        raise InconsistentUnitValue(f"{spec.treatment_group!r} must be constant within unit")
    unit_group = np.bincount(data.unit, weights=group) / np.bincount(data.unit)
    if np.ptp(unit_group) == 0.0:
        raise CollinearInteraction(f"{spec.treatment_group!r} does not vary across units; its effects are not identified")
    cols = [group * cov[spec.treatment_status], group, cov[spec.treatment_status]]
    names = [spec.interaction_label, spec.treatment_group, spec.treatment_status]
    for c in spec.controls:
        cols.append(cov[c])
        names.append(c)
    if spec.include_time_fe:
        pos = data.period_pos
        for k in np.unique(pos)[1:]:
            cols.append((pos == k).astype(np.float64))
            names.append(f"period[{int(data.periods[k])}]")
    return np.column_stack(cols), names


def estimate_variance_components(dataset: PanelDataset, spec: DidSpec) -> VarianceComponents:
    """Between/within moment estimates of the unit and idiosyncratic variances.

    sigma_e2 is the within-regression residual variance; sigma_u2 is the
    between-regression residual variance minus sigma_e2 / T (T the harmonic
    mean of observations per unit), floored at zero.
    """
    data = dataset.complete_cases(spec.variables)
    t_i = np.bincount(data.unit, minlength=data.n_units).astype(np.float64)
    if t_i.max() < 2:
        raise DegeneratePanel("every unit has a single observation")
    x, names = _regressors(data, spec)
    y = data.outcome

    xw = one_way_within(x, data.unit)
    yw = one_way_within(y, data.unit)
    wfit = solve_ols(DesignMatrix(xw, names), yw, absorbed={"unit": data.n_units})
    sigma_e2 = float(wfit.residuals @ wfit.residuals) / wfit.dof_residual

    xb = np.column_stack([np.bincount(data.unit, weights=x[:, j]) / t_i for j in range(x.shape[1])])
    yb = np.bincount(data.unit, weights=y) / t_i
    xb = np.column_stack([np.ones(data.n_units), xb])
    bfit = solve_ols(DesignMatrix(xb, ["const"] + names), yb)
    if bfit.dof_residual <= 0:
        raise DegeneratePanel("too few units for the between regression")
    sigma_b2 = float(bfit.residuals @ bfit.residuals) / bfit.dof_residual
    t_bar = data.n_units / np.sum(1.0 / t_i)
    moment = sigma_u2 = sigma_b2 - sigma_e2 / t_bar
    if sigma_u2 < 0:
        warnings.warn(f"negative unit-variance moment estimate {sigma_u2:.3g} floored at 0", stacklevel=2)
        sigma_u2 = 0.0
    return VarianceComponents(sigma_u2=float(sigma_u2), sigma_e2=sigma_e2, obs_per_unit=t_i, sigma_u2_moment=float(moment))


def estimate_did(dataset: PanelDataset, spec: DidSpec, components: VarianceComponents | None = None) -> EstimateTable:
    """Feasible GLS for the interaction DiD model, SEs clustered by unit.

    ``components`` overrides the moment estimates (``obs_per_unit`` is
    recomputed from the data either way).
    """
    data = dataset.complete_cases(spec.variables)
    x, names = _regressors(data, spec)
    if components is None:
        components = estimate_variance_components(data, spec)
    t_i = np.bincount(data.unit, minlength=data.n_units).astype(np.float64)
    theta = quasi_demeaning_theta(components.sigma_u2, components.sigma_e2, t_i)[data.unit]

    x = np.column_stack([np.ones(data.n_obs), x])
    names = ["const"] + names
    xq = x - theta[:, None] * (x - one_way_within(x, data.unit))
    yq = data.outcome - theta * (data.outcome - one_way_within(data.outcome, data.unit))
    X = DesignMatrix(xq, names)
    fit = solve_ols(X, yq)
    key = [spec.interaction_label, spec.treatment_group, spec.treatment_status]
    lost = [n for n in key if n in fit.dropped_columns]
    if lost:
        raise CollinearInteraction(f"collinear treatment term(s): {', '.join(lost)}")
    vcov = cluster_robust_vcov(fit, X, data.unit)
    order = key + [n for n in fit.names if n not in key]
    idx = [fit.names.index(n) for n in order]
    return EstimateTable(
        labels=order,
        estimates=fit.coefficients[idx],
        std_errors=None,
        vcov=vcov[np.ix_(idx, idx)],
        n_obs=data.n_obs,
        n_units=data.n_units,
        n_clusters=data.n_units,
        method="did",
        dof_residual=fit.dof_residual,
    )
