import numpy as np
import pytest

from staggerdid.panel import PanelDataset


def make_panel(rng, n_units=50, n_periods=10, adoption_choices=(np.nan, 4, 6, 8), drop_share=0.0,
               n_covariates=0, first_period=1, outcome=None):
    """Random panel; ``drop_share`` removes rows at random (keeping >= 2 per unit)."""
    unit = np.repeat(np.arange(n_units), n_periods)
    pos = np.tile(np.arange(n_periods), n_units)
    keep = np.ones(len(unit), dtype=bool)
    if drop_share:
        keep = rng.random(len(unit)) >= drop_share
        for u in range(n_units):
            rows = np.flatnonzero(unit == u)
            if keep[rows].sum() < 2:
                keep[rows[:2]] = True
    unit, pos = unit[keep], pos[keep]
    adoption = rng.choice(np.asarray(adoption_choices, dtype=float), size=n_units)
    y = rng.normal(size=len(unit)) if outcome is None else outcome
    cov = {f"z{j}": rng.normal(size=len(unit)) for j in range(n_covariates)}
    return PanelDataset(
        unit_ids=np.arange(n_units),
        cluster_ids=np.arange(n_units),
        periods=first_period + np.arange(n_periods),
        unit=unit,
        period=first_period + pos,
        outcome=y,
        adoption=adoption + (first_period - 1),
        covariates=cov,
    )


def dummy_regression(y, X, unit, period):
    """OLS with explicit unit and period dummies; returns the coefficients on X."""
    n_u = unit.max() + 1
    n_t = period.max() + 1
    D_u = np.zeros((len(y), n_u))
    D_u[np.arange(len(y)), unit] = 1.0
    D_t = np.zeros((len(y), n_t - 1))
    rows = period > 0
    D_t[np.flatnonzero(rows), period[rows] - 1] = 1.0
    full = np.column_stack([X, D_u, D_t])
    beta, *_ = np.linalg.lstsq(full, y, rcond=None)
    return beta[: X.shape[1]]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_config(rng, noise_sd=0.0, n_units=None, n_covariates=None, **overrides):
    """Random staggered design with heterogeneous effect paths."""
    from staggerdid.simulate import DgpConfig

    T = int(rng.integers(6, 11))
    first = int(rng.integers(1, 2000))
    n_cohorts = int(rng.integers(1, 5))
    cohorts = sorted(int(first + p) for p in rng.choice(np.arange(1, T), size=n_cohorts, replace=False))
    paths = {e: tuple(rng.normal(0, 1, size=T).round(6)) for e in cohorts}
    k = int(rng.integers(0, 3)) if n_covariates is None else n_covariates
    kw = dict(
        n_units=int(rng.integers(40, 120)) if n_units is None else n_units,
        n_periods=T,
        cohort_adoption_periods=cohorts,
        effect_paths=paths,
        never_treated_share=float(rng.uniform(0.2, 0.6)),
        noise_sd=noise_sd,
        covariates={f"x{j}": float(rng.normal()) for j in range(k)},
        first_period=first,
        seed=int(rng.integers(0, 2**63)),
    )
    kw.update(overrides)
    return DgpConfig(**kw)


def full_window(config, **kw):
    """Singleton bins over every relative period the design can observe."""
    from staggerdid.eventstudy import EventStudySpec

    pos = [(e - config.first_period) // config.period_step for e in config.cohort_adoption_periods]
    return EventStudySpec.window(-max(pos), config.n_periods - 1 - min(pos), **kw)


CLI_CONFIG = {
    "n_units": 120,
    "n_periods": 8,
    "cohort_adoption_periods": [3, 5],
    "effect_paths": {"3": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5], "5": [0.05, 0.05, 0.05, 0.05]},
    "never_treated_share": 0.4,
    "noise_sd": 0.5,
    "covariates": {"age": 0.1},
    "n_clusters": 30,
    "seed": 42,
}


def cli_pipeline(workdir, config=None, reps=3):
    """simulate -> estimate (fe, iw) -> montecarlo in ``workdir``; returns exit codes."""
    import json

    from staggerdid.cli import main

    workdir.mkdir(parents=True, exist_ok=True)
    cfg = workdir / "config.json"
    cfg.write_text(json.dumps(config or CLI_CONFIG))
    panel = workdir / "sim" / "panel.csv"
    codes = {"simulate": main(["simulate", "--config", str(cfg), "--out", str(panel)])}
    for m in ("fe", "iw"):
        codes[m] = main(["estimate", "--input", str(panel), "--method", m, "--controls", "age", "--out", str(workdir / m)])
    codes["montecarlo"] = main(["montecarlo", "--config", str(cfg), "--reps", str(reps), "--threads", "2", "--out", str(workdir / "mc")])
    return codes


def validate_outputs(workdir):
    """Check every JSON output against its schema and every CSV header; returns files checked."""
    import json

    import jsonschema
    import pandas as pd

    from staggerdid import schema_path

    columns = json.loads(schema_path("csv_columns").read_text())
    by_name = {
        "estimates.json": "estimates", "catt.json": "catt", "pretrends.json": "pretrends",
        "manifest.json": "manifest", "mc_summary.json": "mc_summary", "truth.json": "truth",
    }
    checked = []
    for path in sorted(workdir.rglob("*.json")):
        if path.name == "config.json":
            continue
        schema = json.loads(schema_path(by_name[path.name]).read_text())
        jsonschema.validate(json.loads(path.read_text()), schema)
        checked.append(path)
    for path in sorted(workdir.rglob("*.csv")):
        header = list(pd.read_csv(path, nrows=0).columns)
        if path.name == "panel.csv":
            assert set(columns["panel"]["required"]) <= set(header), path
        else:
            assert header == columns[path.stem], path
        checked.append(path)
    return checked


ACCEPTANCE_LINES = []


def report(criterion, ok, detail):
    """Record one acceptance line; printed in the terminal summary."""
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
