import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_config
from staggerdid.errors import InvalidConfig
from staggerdid.eventstudy import EventStudySpec, estimate_fe, estimate_iw
from staggerdid.panel import build_cohorts
from staggerdid.simulate import (
    DgpConfig,
    generate_panel,
    load_config,
    realized_shares,
    replication_seed,
    run_monte_carlo,
    true_iw_target,
)


def base(**kw):
    d = dict(n_units=60, n_periods=8, cohort_adoption_periods=(4,), effect_paths={4: (0.5,) * 8}, seed=1)
    d.update(kw)
    return DgpConfig(**d)


def assert_same_panel(a, b):
    for field in ("unit_ids", "cluster_ids", "periods", "unit", "period", "outcome", "adoption"):
        assert getattr(a, field).tobytes() == getattr(b, field).tobytes(), field
    assert a.covariates.keys() == b.covariates.keys()
    for k in a.covariates:
        assert a.covariates[k].tobytes() == b.covariates[k].tobytes()


# -- config -----------------------------------------------------------------


@pytest.mark.parametrize("kw", [
    dict(never_treated_share=1.5),
    dict(cohort_adoption_periods=(4, 4)),
    dict(cohort_adoption_periods=(20,)),
    dict(effect_paths={4: (0.5, 0.5)}),
    dict(noise_sd=-1.0),
    dict(cohort_shares=(0.3, 0.7)),
    dict(n_clusters=0),
])
def test_invalid_config(kw):
    with pytest.raises(InvalidConfig):
        base(**kw)


def test_config_round_trip(tmp_path):
    cfg = base(covariates={"age": 0.2}, lead_effects={4: {-2: -0.06}}, cohort_shares=(1.0,))
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
    assert load_config(tmp_path / "c.json") == cfg
    (tmp_path / "bad.json").write_text(json.dumps(dict(cfg.to_dict(), colour="red")))
    with pytest.raises(InvalidConfig, match="colour"):
        load_config(tmp_path / "bad.json")


# -- generate_panel ---------------------------------------------------------


def test_deterministic():
    cfg = base(covariates={"z": 1.0})
    a, ta = generate_panel(cfg)
    b, tb = generate_panel(cfg)
    assert_same_panel(a, b)
    assert ta.delta.tobytes() == tb.delta.tobytes()
    c, _ = generate_panel(replace(cfg, seed=2))
    assert c.outcome.tobytes() != a.outcome.tobytes()


def test_zero_noise_effect_is_exact():
    cfg = base(noise_sd=0.0)
    treated, _ = generate_panel(cfg)
    control, _ = generate_panel(replace(cfg, effect_paths={4: (0.0,) * 8}))
    diff = treated.outcome - control.outcome
    rel = build_cohorts(treated).relative_time
    post = rel >= 0
    assert post.any()
    np.testing.assert_allclose(diff[post], 0.5, rtol=0, atol=1e-12)
    assert np.all(diff[~post] == 0.0)


def test_all_never_treated():
    ds, truth = generate_panel(base(never_treated_share=1.0))
    assert np.isnan(ds.adoption).all()
    assert len(truth) == 0


def test_truth_matches_config_paths():
    cfg = base(cohort_adoption_periods=(3, 6), effect_paths={3: tuple(range(6)), 6: (9.0, 8.0, 7.0)},
               lead_effects={6: {-1: 0.5, -2: 0.25}})
    ds, truth = generate_panel(cfg)
    for (e, l), d in zip(truth.cells, truth.delta):
        assert d == cfg.effect(e, l) - cfg.effect(e, -1)
    assert dict(zip(truth.cells, truth.delta))[(6, 0)] == 8.5


def test_clusters_assigned_round_robin():
    ds, _ = generate_panel(base(n_units=20, n_clusters=5))
    assert ds.cluster_ids.tolist() == [i % 5 for i in range(20)]


def test_shares_converge():
    cfg = base(n_units=20_000, n_periods=4, cohort_adoption_periods=(2, 3), effect_paths={2: (0,) * 4, 3: (0,) * 4},
               never_treated_share=0.5, cohort_shares=(0.3, 0.7), seed=9)
    ds, _ = generate_panel(cfg)
    for value, p in ((np.nan, 0.5), (2.0, 0.15), (3.0, 0.35)):
        got = np.isnan(ds.adoption).mean() if np.isnan(value) else np.mean(ds.adoption == value)
        assert abs(got - p) < 3 * np.sqrt(p * (1 - p) / cfg.n_units)


# -- true_iw_target ---------------------------------------------------------


def test_target_equal_shares():
    cfg = base(cohort_adoption_periods=(3, 5), effect_paths={3: (1.0,) * 6, 5: (3.0,) * 4})
    assert true_iw_target(cfg, {0: {3: 0.5, 5: 0.5}}, [(0,)]) == {"0": 2.0}


def test_target_single_cohort_is_path():
    cfg = base(effect_paths={4: (0.1, 0.2, 0.3, 0.4, 0.5)})
    got = true_iw_target(cfg, {l: {4: 1.0} for l in range(5)}, [(l,) for l in range(5)])
    assert got == {str(l): pytest.approx(cfg.effect_paths[4][l] - 0.0) for l in range(5)}


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_target_matches_double_sum(seed):
    rng = np.random.default_rng(seed)
    cfg = random_config(rng, n_units=80)
    ds, _ = generate_panel(cfg)
    shares = realized_shares(ds)
    bins = [(-2,), (0,), (1, 2), (3, 4, 5)]
    got = true_iw_target(cfg, shares, bins)
    for b in bins:
        terms, periods = 0.0, 0
        for l in b:
            if l not in shares:
                continue
            periods += 1
            for e in cfg.cohort_adoption_periods:
                if e in shares[l]:
                    terms += (cfg.effect(e, l) - cfg.effect(e, -1)) * shares[l][e]
        expect = terms / periods if periods else float("nan")
        assert got["..".join(map(str, (b[0], b[-1]))) if len(b) > 1 else str(b[0])] == pytest.approx(expect, abs=1e-12, nan_ok=True)


def test_realized_shares_sum_to_one(rng):
    ds, _ = generate_panel(random_config(rng))
    for l, sh in realized_shares(ds).items():
        assert sum(sh.values()) == pytest.approx(1.0, abs=1e-12)


# -- Monte Carlo ------------------------------------------------------------


def test_replication_seed():
    s = replication_seed(2024, 3)
    assert s == replication_seed(2024, 3)
    assert 0 <= s < 2**64
    assert len({replication_seed(2024, r) for r in range(1000)}) == 1000
    assert replication_seed(2024, 0) != replication_seed(2025, 0)


def test_schedule_does_not_change_results():
    cfg = base(n_units=80, noise_sd=1.0)
    spec = EventStudySpec()
    a = run_monte_carlo(cfg, spec, 6, threads=1)
    b = run_monte_carlo(cfg, spec, 6, threads=4)
    assert a.seeds == b.seeds
    for e in ("fe", "iw"):
        assert a.estimates[e].tobytes() == b.estimates[e].tobytes()
        assert a.std_errors[e].tobytes() == b.std_errors[e].tobytes()
    assert a.to_frame().equals(b.to_frame())


def test_single_replication_matches_direct_run():
    cfg = base(n_units=80, noise_sd=1.0, seed=5)
    spec = EventStudySpec()
    mc = run_monte_carlo(cfg, spec, 1)
    ds, _ = generate_panel(replace(cfg, seed=replication_seed(5, 0)))
    assert mc.estimates["fe"][0].tobytes() == estimate_fe(ds, None, spec).estimates.tobytes()
    assert mc.estimates["iw"][0].tobytes() == estimate_iw(ds, None, spec).table.estimates.tobytes()
    np.testing.assert_array_equal(mc.stats("fe")["mean_estimate"], mc.estimates["fe"][0])
    assert set(np.unique(mc.coverage("iw"))) <= {0.0, 1.0}


@pytest.mark.filterwarnings("ignore:dropping")
def test_failures_are_counted():
    # with 3 units some draws have no unit in the cohort
    cfg = base(n_units=3, never_treated_share=0.5, noise_sd=1.0, seed=0)
    mc = run_monte_carlo(cfg, EventStudySpec(), 30)
    assert 0 < mc.failures["iw"] < 30
    failed = np.isnan(mc.estimates["iw"]).all(axis=1)
    assert failed.sum() == mc.failures["iw"]
    assert (mc.stats("iw")["n_ok"] == 30 - mc.failures["iw"]).all()


def test_summary_serializes(tmp_path):
    mc = run_monte_carlo(base(n_units=80, noise_sd=1.0), EventStudySpec(), 3)
    mc.write_json(tmp_path / "s.json")
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["replications"] == 3 and doc["bins"] == ["-3", "-2", "0", "1", "2", "3"]
    assert len(doc["per_bin"]) == 12
    assert all(0.0 <= r["coverage"] <= 1.0 for r in doc["per_bin"])
    pdat = mc.plot_data(0.90)
    assert (pdat["ci_lo"] <= pdat["estimate"]).all() and (pdat["estimate"] <= pdat["ci_hi"]).all()


def test_homogeneous_bias_small():
    cfg = DgpConfig(n_units=300, n_periods=10, cohort_adoption_periods=(4, 5, 6, 7),
                    effect_paths={e: (0.04,) * 10 for e in (4, 5, 6, 7)}, never_treated_share=0.4, noise_sd=0.2, seed=17)
    mc = run_monte_carlo(cfg, EventStudySpec(), 200, threads=4)
    for e in ("fe", "iw"):
        s = mc.stats(e)
        assert (np.abs(s["bias"]) < 2 * s["empirical_sd"] / np.sqrt(200)).all(), s
