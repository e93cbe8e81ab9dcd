"""Synthetic staggered-adoption panels with known effects, and a Monte Carlo harness.

Outcome model::

    y_it = a_i + l_t + tau[E_i, t - E_i] + gamma' z_it + eps_it

with relative time counted in waves. Replication ``r`` of a Monte Carlo
run draws its panel from seed ``replication_seed(master_seed, r)``, which
is derived with :class:`numpy.random.SeedSequence` from the pair
``(master_seed, r)``; results therefore do not depend on execution order.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .errors import EstimationError, InvalidConfig
from .eventstudy import CattMatrix, EventStudySpec, estimate_fe, estimate_iw, pretrend_test
from .panel import PanelDataset, build_cohorts
from .results import bin_label

MC_SCHEMA_ID = "staggerdid.mc_summary/1"
THREADS_ENV = "STAGGERDID_THREADS"


@dataclass(frozen=True)
class DgpConfig:
    """Generative spec for a staggered-adoption panel.

    ``effect_paths[e][k]`` is the true effect for cohort ``e`` at ``k``
    waves after adoption and must cover every lag observable in the panel.
    ``lead_effects[e]`` optionally maps negative relative periods to
    anticipation effects. ``cohort_shares`` splits the treated share
    (equal split when omitted). ``covariates`` maps control names to
    their coefficients.
    """

    n_units: int
    n_periods: int
    cohort_adoption_periods: tuple
    effect_paths: Mapping[int, tuple]
    never_treated_share: float = 0.5
    cohort_shares: Optional[tuple] = None
    lead_effects: Mapping[int, Mapping[int, float]] = field(default_factory=dict)
    unit_effect_sd: float = 1.0
    time_effect_sd: float = 1.0
    noise_sd: float = 1.0
    covariates: Mapping[str, float] = field(default_factory=dict)
    n_clusters: Optional[int] = None
    first_period: int = 1
    period_step: int = 1
    seed: int = 0

    def __post_init__(self):
        norm = lambda m: {int(k): v for k, v in m.items()}
        object.__setattr__(self, "cohort_adoption_periods", tuple(int(e) for e in self.cohort_adoption_periods))
        object.__setattr__(self, "effect_paths", {int(k): tuple(float(x) for x in v) for k, v in self.effect_paths.items()})
        object.__setattr__(self, "lead_effects", {int(k): norm(v) for k, v in self.lead_effects.items()})
        object.__setattr__(self, "covariates", dict(self.covariates))
        if self.cohort_shares is not None:
            object.__setattr__(self, "cohort_shares", tuple(float(s) for s in self.cohort_shares))
        self.validate()

    @property
    def periods(self) -> np.ndarray:
        return self.first_period + self.period_step * np.arange(self.n_periods)

    def validate(self) -> None:
        if self.n_units < 1 or self.n_periods < 2:
            raise InvalidConfig("need at least one unit and two periods")
        if not 0.0 <= self.never_treated_share <= 1.0:
            raise InvalidConfig("never_treated_share must lie in [0, 1]")
        if self.never_treated_share < 1.0 and not self.cohort_adoption_periods:
            raise InvalidConfig("treated share is positive but no cohorts are configured")
        if len(set(self.cohort_adoption_periods)) != len(self.cohort_adoption_periods):
            raise InvalidConfig("duplicate cohort adoption period")
        if self.cohort_shares is not None:
            if len(self.cohort_shares) != len(self.cohort_adoption_periods):
                raise InvalidConfig("cohort_shares must match cohort_adoption_periods")
            if min(self.cohort_shares) < 0 or not np.isclose(sum(self.cohort_shares), 1.0):
                raise InvalidConfig("cohort_shares must be nonnegative and sum to 1")
        for sd in (self.unit_effect_sd, self.time_effect_sd, self.noise_sd):
            if sd < 0:
                raise InvalidConfig("standard deviations must be nonnegative")
        if self.n_clusters is not None and not 1 <= self.n_clusters <= self.n_units:
            raise InvalidConfig("n_clusters must lie in [1, n_units]")
        grid = self.periods.tolist()
        beyond = grid[-1] + self.period_step
        for e in self.cohort_adoption_periods:
            if e not in grid and e != beyond:
                raise InvalidConfig(f"adoption period {e} is not on the period grid")
            pos = self.n_periods if e == beyond else grid.index(e)
            needed = self.n_periods - pos
            if needed > 0 and len(self.effect_paths.get(e, ())) < needed:
                raise InvalidConfig(f"effect path of cohort {e} must cover {needed} lags")

    def effect(self, e: int, rel: int) -> float:
        """True effect relative to an untreated counterfactual."""
        if rel >= 0:
            return self.effect_paths[e][rel]
        return float(self.lead_effects.get(e, {}).get(rel, 0.0))

    def catt_truth(self, e: int, rel: int, reference_period: int = -1) -> float:
        """True effect normalised to the reference period, as the CATT regression identifies it."""
        return self.effect(e, rel) - self.effect(e, reference_period)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cohort_adoption_periods"] = list(self.cohort_adoption_periods)
        d["effect_paths"] = {str(k): list(v) for k, v in self.effect_paths.items()}
        d["lead_effects"] = {str(k): {str(a): b for a, b in v.items()} for k, v in self.lead_effects.items()}
        d["cohort_shares"] = None if self.cohort_shares is None else list(self.cohort_shares)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "DgpConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise InvalidConfig(f"unknown config key(s): {sorted(extra)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from None


def load_config(path) -> DgpConfig:
    """Read a :class:`DgpConfig` from a JSON object of field -> value."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{path}: {exc}") from None
    if not isinstance(raw, dict):
        raise InvalidConfig(f"{path}: expected a JSON object")
    return DgpConfig.from_dict(raw)


def generate_panel(config: DgpConfig) -> tuple[PanelDataset, CattMatrix]:
    """Draw a balanced panel and its ground-truth CATT matrix."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n, T = config.n_units, config.n_periods
    periods = config.periods
    cohorts = list(config.cohort_adoption_periods)

    treated_share = 1.0 - config.never_treated_share
    split = config.cohort_shares or tuple(1.0 / len(cohorts) for _ in cohorts) if cohorts else ()
    probs = np.array([config.never_treated_share] + [treated_share * s for s in split])
    group = rng.choice(len(probs), size=n, p=probs / probs.sum())
    adoption = np.array([np.nan] + [float(e) for e in cohorts])[group]

    alpha = rng.normal(0.0, config.unit_effect_sd, size=n)
    lam = rng.normal(0.0, config.time_effect_sd, size=T)
    unit = np.repeat(np.arange(n), T)
    pos = np.tile(np.arange(T), n)
    period = periods[pos]

    beyond = periods[-1] + config.period_step
    adopt_pos = np.array([np.nan if np.isnan(a) else (T if a == beyond else int(np.searchsorted(periods, a))) for a in adoption])
    rel = pos - adopt_pos[unit]
    tau = np.zeros(n * T)
    for e in cohorts:
        rows = np.flatnonzero(adoption[unit] == e)
        tau[rows] = [config.effect(e, int(r)) for r in rel[rows]]

    covariates = {}
    y = alpha[unit] + lam[pos] + tau
    for name, coef in config.covariates.items():
        z = rng.normal(size=n * T) + 0.5 * alpha[unit]
        covariates[name] = z
        y = y + coef * z
    y = y + rng.normal(0.0, config.noise_sd, size=n * T)

    n_clusters = config.n_clusters or n
    cluster_ids = np.arange(n) % n_clusters
    dataset = PanelDataset(
        unit_ids=np.arange(1, n + 1),
        cluster_ids=cluster_ids,
        periods=periods,
        unit=unit,
        period=period,
        outcome=y,
        adoption=adoption,
        covariates=covariates,
    )
    return dataset, truth_catt(config, dataset)


def truth_catt(config: DgpConfig, dataset: PanelDataset, reference_period: int = -1) -> CattMatrix:
    """Ground-truth CATT for every realized (cohort, rel_period) cell."""
    cm = build_cohorts(dataset)
    treated = ~np.isnan(cm.relative_time)
    e = cm.obs_cohort[treated].astype(np.int64)
    l = cm.relative_time[treated].astype(np.int64)
    keep = l != reference_period
    cells, counts = np.unique(np.column_stack([e[keep], l[keep]]), axis=0, return_counts=True)
    cells = [tuple(int(v) for v in c) for c in cells]
    return CattMatrix(
        cells=cells,
        delta=[config.catt_truth(a, b, reference_period) for a, b in cells],
        vcov=np.zeros((len(cells), len(cells))),
        cell_counts=counts,
        n_obs=dataset.n_obs,
        n_units=dataset.n_units,
    )


def realized_shares(dataset: PanelDataset, min_count: int = 2) -> dict:
    """rel_period -> {cohort: share of treated observations at that period}."""
    cm = build_cohorts(dataset.complete_cases())
    treated = ~np.isnan(cm.relative_time)
    frame = pd.DataFrame({"e": cm.obs_cohort[treated].astype(np.int64), "l": cm.relative_time[treated].astype(np.int64)})
    counts = frame.groupby(["l", "e"]).size()
    counts = counts[counts >= min_count]
    out = {}
    for l, sub in counts.groupby(level="l"):
        total = sub.sum()
        out[int(l)] = {int(e): c / total for (_, e), c in sub.items()}
    return out


def true_iw_target(config: DgpConfig, shares: Mapping[int, Mapping[int, float]], bins: Sequence[Sequence[int]], reference_period: int = -1) -> dict:
    """Share-weighted true effect per bin, averaged over the bin's observed periods."""
    out = {}
    for b in bins:
        present = [l for l in b if l in shares and shares[l]]
        if not present:
            out[bin_label(b)] = float("nan")
            continue
        total = 0.0
        for l in present:
            total += sum(config.catt_truth(e, l, reference_period) * s for e, s in shares[l].items())
        out[bin_label(b)] = total / len(present)
    return out


# --------------------------------------------------------------------------
# Monte Carlo


def replication_seed(master_seed: int, replication: int) -> int:
    """64-bit seed for one replication, a pure function of (master_seed, replication)."""
    state = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(replication),)).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True, eq=False)
class McSummary:
    """Raw replication draws plus per-bin summary statistics.

    Arrays are ``replications x bins``; failed replications hold NaN.
    """

    estimators: tuple
    labels: tuple
    replications: int
    truths: np.ndarray
    estimates: Mapping[str, np.ndarray]
    std_errors: Mapping[str, np.ndarray]
    pretrend_p: Mapping[str, np.ndarray]
    failures: Mapping[str, int]
    seeds: tuple
    level: float = 0.95

    @property
    def truth(self) -> np.ndarray:
        return np.nanmean(self.truths, axis=0)

    def stats(self, estimator: str) -> pd.DataFrame:
        est = self.estimates[estimator]
        se = self.std_errors[estimator]
        err = est - self.truths
        ok = ~np.isnan(est)
        n_ok = ok.sum(axis=0)
        z = stats.norm.ppf(0.5 + self.level / 2.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            covered = np.where(ok, np.abs(err) <= z * se, np.nan)
            sd = np.nanstd(est, axis=0, ddof=1) if est.shape[0] > 1 else np.zeros(est.shape[1])
            return pd.DataFrame({
                "estimator": estimator,
                "bin": list(self.labels),
                "truth": np.nanmean(self.truths, axis=0),
                "mean_estimate": np.nanmean(est, axis=0),
                "bias": np.nanmean(err, axis=0),
                "empirical_sd": sd,
                "mean_se": np.nanmean(se, axis=0),
                "coverage": np.nanmean(covered, axis=0),
                "n_ok": n_ok,
            })

    def bias(self, estimator: str) -> np.ndarray:
        return self.stats(estimator)["bias"].to_numpy()

    def coverage(self, estimator: str) -> np.ndarray:
        return self.stats(estimator)["coverage"].to_numpy()

    def rejection_rate(self, estimator: str, alpha: float = 0.05) -> float:
        p = self.pretrend_p[estimator]
        p = p[~np.isnan(p)]
        return float(np.mean(p < alpha)) if p.size else float("nan")

    def to_frame(self) -> pd.DataFrame:
        return pd.concat([self.stats(e) for e in self.estimators], ignore_index=True)

    def write_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")

    def to_dict(self) -> dict:
        rows = self.to_frame().to_dict(orient="records")
        clean = lambda v: None if isinstance(v, float) and not np.isfinite(v) else v
        return {
            "schema": MC_SCHEMA_ID,
            "replications": int(self.replications),
            "level": float(self.level),
            "estimators": list(self.estimators),
            "bins": list(self.labels),
            "truth": [clean(float(t)) for t in self.truth],
            "per_bin": [{k: (clean(float(v)) if isinstance(v, (float, np.floating)) else (int(v) if isinstance(v, (np.integer,)) else v)) for k, v in r.items()} for r in rows],
            "failures": {k: int(v) for k, v in self.failures.items()},
            "pretrend_rejection_rate_05": {e: clean(self.rejection_rate(e)) for e in self.estimators},
            "seeds": [int(s) for s in self.seeds],
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def plot_data(self, level: float = 0.90) -> pd.DataFrame:
        """One row per (bin, method): mean estimate with a CI from the mean SE."""
        z = stats.norm.ppf(0.5 + level / 2.0)
        rows = []
        for e in self.estimators:
            s = self.stats(e)
            for b, m, se in zip(s["bin"], s["mean_estimate"], s["mean_se"]):
                rows.append({"bin": b, "method": e, "estimate": m, "ci_lo": m - z * se, "ci_hi": m + z * se})
        return pd.DataFrame(rows)


_ESTIMATORS = {
    "fe": lambda data, spec: estimate_fe(data, None, spec),
    "iw": lambda data, spec: estimate_iw(data, None, spec).table,
}


def _one_replication(config: DgpConfig, spec: EventStudySpec, r: int, estimators: Sequence[str]):
    cfg = replace(config, seed=replication_seed(config.seed, r))
    data, _ = generate_panel(cfg)
    truth = true_iw_target(cfg, realized_shares(data), spec.bins, spec.reference_period)
    truth = np.array([truth[lab] for lab in spec.labels])
    out = {}
    for name in estimators:
        try:
            table = _ESTIMATORS[name](data, spec)
        except EstimationError:
            out[name] = None
            continue
        try:
            p = pretrend_test(table)[2]
        except (EstimationError, ValueError):
            p = np.nan
        out[name] = (table.estimates, table.std_errors, p)
    return cfg.seed, truth, out


def run_monte_carlo(
    config: DgpConfig,
    spec: EventStudySpec,
    replications: int,
    estimators: Sequence[str] = ("fe", "iw"),
    threads: Optional[int] = None,
    level: float = 0.95,
) -> McSummary:
    """Repeat generate-and-estimate, comparing each estimator to the IW target.

    A replication whose estimation fails is recorded as NaN and counted in
    ``failures``; it does not stop the run.
    """
    if replications < 1:
        raise ValueError("replications must be at least 1")
    estimators = tuple(estimators)
    unknown = set(estimators) - set(_ESTIMATORS)
    if unknown:
        raise ValueError(f"unknown estimator(s) {sorted(unknown)}")
    threads = threads or default_threads()
    task = lambda r: _one_replication(config, spec, r, estimators)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(task, range(replications)))
    else:
        results = [task(r) for r in range(replications)]

    n_bins = len(spec.bins)
    est = {e: np.full((replications, n_bins), np.nan) for e in estimators}
    ses = {e: np.full((replications, n_bins), np.nan) for e in estimators}
    pvals = {e: np.full(replications, np.nan) for e in estimators}
    failures = {e: 0 for e in estimators}
    truths = np.empty((replications, n_bins))
    seeds = []
    for r, (seed, truth, out) in enumerate(results):
        seeds.append(seed)
        truths[r] = truth
        for e in estimators:
            if out[e] is None:
                failures[e] += 1
            else:
                est[e][r], ses[e][r], pvals[e][r] = out[e]
    return McSummary(
        estimators=estimators,
        labels=spec.labels,
        replications=replications,
        truths=truths,
        estimates=est,
        std_errors=ses,
        pretrend_p=pvals,
        failures=failures,
        seeds=tuple(seeds),
        level=level,
    )


# --------------------------------------------------------------------------
# random-effects DiD panels


@dataclass(frozen=True)
class DidDgpConfig:
    """Panel for the interaction DiD model with a unit random intercept.

    ``law`` is a unit-level dummy, ``breastfeeds`` varies over time, ``x1``
    is a time-invariant and ``z1`` a time-varying control.
    """

    n_units: int = 500
    n_periods: int = 10
    beta_interaction: float = -0.041
    beta_group: float = 0.026
    beta_status: float = -0.031
    beta_x: float = 0.2
    beta_z: float = -0.1
    sigma_u: float = 1.0
    sigma_e: float = 1.0
    time_effect_sd: float = 0.1
    group_share: float = 0.5
    seed: int = 0


def generate_did_panel(config: DidDgpConfig) -> PanelDataset:
    rng = np.random.default_rng(config.seed)
    n, T = config.n_units, config.n_periods
    unit = np.repeat(np.arange(n), T)
    pos = np.tile(np.arange(T), n)
    law = (rng.random(n) < config.group_share).astype(np.float64)
    propensity = rng.uniform(0.2, 0.8, size=n)
    status = (rng.random(n * T) < propensity[unit]).astype(np.float64)
    x1 = rng.normal(size=n)
    z1 = rng.normal(size=n * T)
    lam = rng.normal(0.0, config.time_effect_sd, size=T)
    u = rng.normal(0.0, config.sigma_u, size=n)
    y = (
        config.beta_interaction * law[unit] * status
        + config.beta_group * law[unit]
        + config.beta_status * status
        + config.beta_x * x1[unit]
        + config.beta_z * z1
        + lam[pos]
        + u[unit]
        + rng.normal(0.0, config.sigma_e, size=n * T)
    )
    return PanelDataset(
        unit_ids=np.arange(1, n + 1),
        cluster_ids=np.arange(1, n + 1),
        periods=np.arange(1, T + 1),
        unit=unit,
        period=pos + 1,
        outcome=y,
        adoption=np.full(n, np.nan),
        covariates={"law": law[unit], "breastfeeds": status, "x1": x1[unit], "z1": z1},
    )
