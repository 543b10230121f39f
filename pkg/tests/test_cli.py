import json

import numpy as np
import pandas as pd
import pytest

from app.main import build_parser, main
from app.storage.fields import FieldRepository
from tests.conftest import seasonal_wind


def _config(tmp_path, name, **data):
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def _read(path):
    return json.loads(path.read_text(encoding="utf-8"))


@pytest.fixture
def workspace(tmp_path, wind_pair):
    obs, sim = wind_pair
    repo = FieldRepository(tmp_path)
    repo.save(obs, "obs.csv")
    repo.save(sim, "sim.bin")
    return tmp_path


def test_parser_requires_command_and_config():
    with pytest.raises(SystemExit) as info:
        build_parser().parse_args([])
    assert info.value.code == 2
    with pytest.raises(SystemExit):
        build_parser().parse_args(["fit"])
    args = build_parser().parse_args(["adjust", "--config", "run.json", "--mode", "anomaly"])
    assert args.command == "adjust" and args.mode == "anomaly"


def test_fit_writes_bundle_moments_summary_and_clusters(workspace):
    config = _config(workspace, "fit.json", obs_hist="obs.csv", sim_hist="sim.bin",
                     output_dir="out", seed=3, clusters={"k": 2, "restarts": 2})
    assert main(["fit", "--config", config, "--threads", "1"]) == 0

    summary = _read(workspace / "out" / "summary.json")
    assert summary["meta"]["seed"] == 3
    assert summary["n_sites"] == 9
    assert {"lambda_median", "trend_significant_sites", "median_abs_skew_after"} <= set(
        summary["obs"]
    )
    assert sum(summary["cluster_sizes"]) == 9

    moments = pd.read_csv(workspace / "out" / "moments_sim.csv")
    assert list(moments.columns) == [
        "site_id", "skew_before", "kurt_before", "skew_after", "kurt_after"
    ]
    assert len(moments) == 9
    bundle = _read(workspace / "out" / "fit_bundle.json")
    assert set(bundle["obs"]) == {"climatology", "ar", "transform", "lambda_ci"}
    assert (workspace / "out" / "clusters.csv").exists()


def test_adjust_with_identical_histories_returns_input(workspace):
    config = _config(workspace, "adjust.json", obs_hist="sim.bin", sim_hist="sim.bin",
                     sim_future="sim.bin", method="M", output="adj.csv",
                     plan_output="plan.json", obs_future="obs.csv")
    assert main(["adjust", "--config", config, "--threads", "1"]) == 0

    repo = FieldRepository(workspace)
    np.testing.assert_allclose(repo.load("adj.csv").values, repo.load("sim.bin").values,
                               atol=1e-8)
    report = _read(workspace / "adjust_report.json")
    assert report["method"] == "M" and report["mode"] == "as-written"
    assert report["diagnostics"]["n_sites"] == 9
    assert "kl_holdout" in report

    again = _config(workspace, "again.json", plan="plan.json", sim_future="sim.bin",
                    method="M", output="again.csv")
    assert main(["adjust", "--config", again, "--mode", "anomaly"]) == 0
    np.testing.assert_allclose(repo.load("again.csv").values, repo.load("adj.csv").values,
                               atol=1e-8)
    assert _read(workspace / "adjust_report.json")["mode"] == "anomaly"


def test_saved_plan_method_must_match(workspace):
    first = _config(workspace, "a.json", obs_hist="obs.csv", sim_hist="sim.bin",
                    sim_future="sim.bin", method="M", plan_output="plan.json")
    assert main(["adjust", "--config", first]) == 0
    mismatch = _config(workspace, "b.json", plan="plan.json", sim_future="sim.bin", method="MV")
    assert main(["adjust", "--config", mismatch]) == 2


def test_tc_without_clusters_exits_with_config_code(workspace):
    config = _config(workspace, "tc.json", obs_hist="obs.csv", sim_hist="sim.bin",
                     sim_future="sim.bin", method="TC")
    assert main(["adjust", "--config", config]) == 2


def test_config_errors_exit_with_code_two(workspace):
    unknown = _config(workspace, "u.json", obs="obs.csv", sim="sim.bin", colour="blue")
    assert main(["kl", "--config", unknown]) == 2
    no_source = _config(workspace, "n.json", sim_future="sim.bin", method="M")
    assert main(["adjust", "--config", no_source]) == 2
    fit = _config(workspace, "f.json", obs_hist="obs.csv", sim_hist="sim.bin")
    assert main(["fit", "--config", fit, "--mode", "anomaly"]) == 2
    assert main(["fit", "--config", str(workspace / "missing.json")]) == 2

def test_nonstationary_great_circle_exits_with_config_code(workspace):
    fit = _config(workspace, "gc.json", obs_hist="obs.csv", sim_hist="sim.bin",
                  covariance="nonstationary", metric="great-circle")
    assert main(["fit", "--config", fit]) == 2
    adjust = _config(workspace, "gc_adj.json", obs_hist="obs.csv", sim_hist="sim.bin",
                     sim_future="sim.bin", method="MN", metric="great-circle")
    assert main(["adjust", "--config", adjust, "--threads", "1"]) == 2



def test_missing_data_file_exits_with_data_code(workspace):
    config = _config(workspace, "kl.json", obs="obs.csv", sim="nope.csv")
    assert main(["kl", "--config", config]) == 3


def test_kl_both_directions(workspace):
    config = _config(workspace, "kl.json", obs="obs.csv", sim="sim.bin", k=5,
                     both_directions=True, output="kl_out.json")
    assert main(["kl", "--config", config]) == 0
    record = _read(workspace / "kl_out.json")
    assert record["k"] == 5 and record["m"] == record["m_prime"] == 3 * 365
    assert record["value"] > 0
    assert set(record["reverse"]) == {"value", "k", "m", "m_prime", "floored_pairs"}


def test_energy_identical_surfaces_give_zero_delta(workspace):
    (workspace / "curves.csv").write_text(
        "turbine,hub_height_m,rotor_d_m,rated_kw,cut_in,rated_speed,cut_out\n"
        "T2,80,90,2000,3,12,25\n", encoding="utf-8",
    )
    (workspace / "farms.csv").write_text(
        "site_id,turbine,count,tariff_per_kwh\n0,T2,10,0.08\n4,T2,5,0.1\n", encoding="utf-8",
    )
    config = _config(workspace, "energy.json", surface_hist="obs.csv", surface_future="obs.csv",
                     power_curves="curves.csv", farms="farms.csv", n_draws=3)
    assert main(["energy", "--config", config]) == 0
    summary = _read(workspace / "revenue_summary.json")
    assert summary["total_mean_delta"] == 0.0
    assert summary["n_draws"] == 3 and summary["n_farms"] == 2
    assert summary["shear_alpha_median"] == pytest.approx(1.0 / 7.0)
    table = pd.read_csv(workspace / "revenue_delta.csv")
    assert table["site_id"].tolist() == [0, 4]


def test_validate_writes_table_and_meta(tmp_path):
    config = _config(tmp_path, "val.json", n_sims=2, methods=["M"], n_replicates=60,
                     n_history=30, seed=4)
    assert main(["validate", "--config", config, "--threads", "2"]) == 0
    table = pd.read_csv(tmp_path / "validation.csv")
    assert len(table) == 4
    assert set(table["method"]) == {"M", "MV"}
    meta = _read(tmp_path / "validation.meta.json")
    assert meta["failed"] == 0 and meta["meta"]["seed"] == 4


def test_validate_experiment_on_real_pair(workspace):
    config = _config(
        workspace, "exp.json", methods=["MV"], mode="anomaly", kl_k=5, seed=6,
        experiment={
            "obs": "obs.csv", "sim": "sim.bin", "split_date": "2002-01-01",
            "subsample": {"n_subsamples": 1, "n_sites": 5, "seed": 2},
        },
    )
    assert main(["validate", "--config", config, "--threads", "1"]) == 0
    table = pd.read_csv(workspace / "validation.csv")
    assert len(table) == 4
    assert set(table["method"]) == {"M", "MV"}
    assert sorted(table["n_sites"].unique().tolist()) == [5, 9]
    meta = _read(workspace / "validation.meta.json")
    assert meta["experiment"] == {"split_date": "2002-01-01", "baseline": "M", "n_subsamples": 1}
    assert meta["kl_ratio"]["M"] == pytest.approx(1.0)
    assert meta["kl_ratio"]["MV"] < 1.0
    assert set(meta["median_subsample_ratio"]) == {"M", "MV"}
    assert meta["meta"]["seed"] == 6


def test_validate_experiment_rejects_unknown_keys(workspace):
    config = _config(workspace, "exp_bad.json",
                     experiment={"obs": "obs.csv", "sim": "sim.bin", "split": "2002-01-01"})
    assert main(["validate", "--config", config]) == 2
