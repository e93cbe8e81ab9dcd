import json
import warnings

import numpy as np
import pandas as pd
import pytest

from conftest import CLI_CONFIG, cli_pipeline, validate_outputs
from staggerdid.cli import main
from staggerdid.panel import load_panel
from staggerdid.simulate import DidDgpConfig, generate_did_panel, replication_seed


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    work = tmp_path_factory.mktemp("run")
    codes = cli_pipeline(work)
    return work, codes


def snapshot(root):
    """Bytes of every output, with wall time removed from manifests."""
    out = {}
    for p in sorted(root.rglob("*")):
        if not p.is_file():
            continue
        if p.name == "manifest.json":
            doc = json.loads(p.read_text())
            doc.pop("wall_time_seconds")
            out[str(p.relative_to(root))] = json.dumps(doc, sort_keys=True).encode()
        else:
            out[str(p.relative_to(root))] = p.read_bytes()
    return out


def write_config(path, **overrides):
    path.write_text(json.dumps(dict(CLI_CONFIG, **overrides)))
    return path


def test_pipeline_exit_codes(pipeline):
    _, codes = pipeline
    assert codes == {"simulate": 0, "fe": 0, "iw": 0, "montecarlo": 0}


def test_outputs_validate(pipeline):
    work, _ = pipeline
    checked = {p.name for p in validate_outputs(work)}
    assert {"estimates.json", "catt.json", "pretrends.json", "manifest.json", "mc_summary.json", "truth.json",
            "estimates.csv", "catt.csv", "mc_summary.csv", "plot_data.csv", "panel.csv"} <= checked


def test_iw_rows_skip_reference(pipeline):
    work, _ = pipeline
    frame = pd.read_csv(work / "iw" / "estimates.csv")
    assert frame["label"].tolist() == [-3, -2, 0, 1, 2, 3]


def test_rerun_is_bitwise_identical(tmp_path):
    cli_pipeline(tmp_path)
    first = snapshot(tmp_path)
    cli_pipeline(tmp_path)
    assert snapshot(tmp_path) == first


def test_simulated_csv_loads_without_warnings(pipeline):
    work, _ = pipeline
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ds = load_panel(work / "sim" / "panel.csv")
    assert ds.n_units == CLI_CONFIG["n_units"]
    truth = json.loads((work / "sim" / "truth.json").read_text())
    assert truth["config"]["seed"] == 42


def test_plot_data_intervals(pipeline, tmp_path):
    work, _ = pipeline
    frame = pd.read_csv(work / "mc" / "plot_data.csv")
    assert len(frame) == 12 and not frame.duplicated(["bin", "method"]).any()
    assert (frame["ci_lo"] <= frame["estimate"]).all() and (frame["estimate"] <= frame["ci_hi"]).all()
    cfg = work / "config.json"
    assert main(["montecarlo", "--config", str(cfg), "--reps", "3", "--ci", "0.95", "--out", str(tmp_path)]) == 0
    wide = pd.read_csv(tmp_path / "plot_data.csv")
    assert ((wide["ci_hi"] - wide["ci_lo"]) > (frame["ci_hi"] - frame["ci_lo"])).all()


def test_table_printed(tmp_path, capsys, pipeline):
    work, _ = pipeline
    assert main(["estimate", "--input", str(work / "sim" / "panel.csv"), "--method", "fe", "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "(ref)" in text and "*** p<0.01, ** p<0.05, * p<0.1" in text


def test_missing_cluster_column(tmp_path, capsys, pipeline):
    work, _ = pipeline
    code = main(["estimate", "--input", str(work / "sim" / "panel.csv"), "--method", "iw", "--cluster", "state", "--out", str(tmp_path)])
    assert code == 3
    assert "state" in capsys.readouterr().err


def test_missing_control_column(tmp_path, capsys, pipeline):
    work, _ = pipeline
    code = main(["estimate", "--input", str(work / "sim" / "panel.csv"), "--method", "fe", "--controls", "income", "--out", str(tmp_path)])
    assert code == 3 and "income" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["estimate", "--method", "fe", "--out", "x"],
    ["estimate", "--input", "a.csv", "--method", "ols", "--out", "x"],
    ["estimate", "--input", "a.csv", "--method", "fe", "--window", "3", "--out", "x"],
    ["estimate", "--input", "a.csv", "--method", "fe", "--window", "-1,3", "--out", "x"],
    ["estimate", "--input", "a.csv", "--method", "did", "--out", "x"],
    ["montecarlo", "--config", "c.json", "--reps", "0", "--out", "x"],
    ["montecarlo", "--config", "c.json", "--reps", "2", "--methods", "fe,cs", "--out", "x"],
    ["frobnicate"],
])
def test_bad_arguments(argv, capsys):
    assert main(argv) == 2


def test_missing_input_file(tmp_path):
    assert main(["estimate", "--input", str(tmp_path / "nope.csv"), "--method", "fe", "--out", str(tmp_path)]) == 3


def test_bad_config(tmp_path):
    bad = tmp_path / "c.json"
    bad.write_text("{not json")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "p.csv")]) == 3
    write_config(bad, never_treated_share=2.0)
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "p.csv")]) == 3


def test_never_treated_panel(tmp_path):
    cfg = write_config(tmp_path / "c.json", never_treated_share=1.0)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "p.csv")]) == 0
    raw = pd.read_csv(tmp_path / "p.csv", dtype=str)
    assert (raw["adoption"] == "NEVER").all()
    # nothing to estimate: estimation failure
    assert main(["estimate", "--input", str(tmp_path / "p.csv"), "--method", "fe", "--out", str(tmp_path / "e")]) == 4


def test_simulate_seed_is_reproducible(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    for name in ("a.csv", "b.csv"):
        assert main(["simulate", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "c.csv")])
    assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "c.csv").read_bytes()


def test_single_rep_matches_estimate(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    assert main(["montecarlo", "--config", str(cfg), "--reps", "1", "--out", str(tmp_path / "mc")]) == 0
    seed = replication_seed(CLI_CONFIG["seed"], 0)
    assert main(["simulate", "--config", str(cfg), "--seed", str(seed), "--out", str(tmp_path / "s" / "p.csv")]) == 0
    summary = pd.read_csv(tmp_path / "mc" / "mc_summary.csv")
    for m in ("fe", "iw"):
        assert main(["estimate", "--input", str(tmp_path / "s" / "p.csv"), "--method", m, "--controls", "age",
                     "--out", str(tmp_path / m)]) == 0
        direct = pd.read_csv(tmp_path / m / "estimates.csv")
        rows = summary[summary["estimator"] == m]
        np.testing.assert_array_equal(rows["mean_estimate"].to_numpy(), direct["estimate"].to_numpy())
        # cluster ids come back from the CSV as strings, so the meat is summed in another order
        np.testing.assert_allclose(rows["mean_se"].to_numpy(), direct["se"].to_numpy(), rtol=1e-12, atol=0)
        assert set(rows["coverage"]) <= {0.0, 1.0}


def test_did_method(tmp_path, capsys):
    generate_did_panel(DidDgpConfig(n_units=80, seed=1)).write_csv(tmp_path / "p.csv")
    code = main(["estimate", "--input", str(tmp_path / "p.csv"), "--method", "did", "--treatment-group", "law",
                 "--treatment-status", "breastfeeds", "--controls", "x1,z1", "--out", str(tmp_path / "o")])
    assert code == 0
    frame = pd.read_csv(tmp_path / "o" / "estimates.csv")
    assert frame["label"].tolist()[:3] == ["law*breastfeeds", "law", "breastfeeds"]
    assert not (tmp_path / "o" / "pretrends.json").exists()
    validate_outputs(tmp_path / "o")


def test_threads_flag_does_not_change_output(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    for t in ("1", "3"):
        assert main(["montecarlo", "--config", str(cfg), "--reps", "4", "--threads", t, "--out", str(tmp_path / t)]) == 0
    assert (tmp_path / "1" / "mc_summary.csv").read_bytes() == (tmp_path / "3" / "mc_summary.csv").read_bytes()
