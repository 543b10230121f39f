import json
from datetime import date

import numpy as np
import pytest

from app.core.errors import DataError
from app.features.climatology.services import fit_ar, fit_mean, mean_residuals
from app.features.clustering.schemas import ClusterAssignment
from app.features.covariance.schemas import MaternParams
from app.features.fields.schemas import ResidualField
from app.storage.base import read_json
from app.storage.clusters import ClusterRepository
from app.storage.energy_inputs import load_farms, load_power_curves, load_profiles
from app.storage.fields import FieldRepository
from app.storage.fits import ARRepository, ClimatologyRepository, CovarianceRepository
from tests.conftest import make_field, seasonal_wind

CSV_HEADER = "site_id,lon,lat,date,speed_mps\n"


@pytest.fixture
def repo(tmp_path):
    return FieldRepository(tmp_path)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


# -----------------------------
# Champs
# -----------------------------
@pytest.mark.parametrize("name", ["wind.csv", "wind.bin"])
def test_field_round_trip(repo, rng, small_coords, name):
    field = seasonal_wind(rng, small_coords, 40, start=date(2004, 2, 27))
    repo.save(field, name)
    again = repo.load(name)
    np.testing.assert_array_equal(again.values, field.values)
    np.testing.assert_array_equal(again.coords, field.coords)
    assert again.calendar.start_date == date(2004, 2, 27)
    assert again.n_days == 40


def test_csv_rows_may_come_in_any_order(repo, tmp_path):
    _write(tmp_path / "w.csv", CSV_HEADER + "\n".join([
        "1,1.0,0.0,2001-01-02,4.0",
        "0,0.0,0.0,2001-01-02,2.0",
        "1,1.0,0.0,2001-01-01,3.0",
        "0,0.0,0.0,2001-01-01,1.0",
    ]) + "\n")
    field = repo.load("w.csv")
    np.testing.assert_array_equal(field.values, [[1.0, 2.0], [3.0, 4.0]])


def test_malformed_header_reports_line_one(repo, tmp_path):
    _write(tmp_path / "bad.csv", "site,lon,lat,date,speed\n0,0,0,2001-01-01,1\n")
    with pytest.raises(DataError, match=r"bad\.csv:1: malformed header"):
        repo.load("bad.csv")


def test_negative_speed_reports_line(repo, tmp_path):
    _write(tmp_path / "neg.csv", CSV_HEADER + "0,0,0,2001-01-01,1.0\n0,0,0,2001-01-02,-0.5\n")
    with pytest.raises(DataError, match=r"neg\.csv:3: negative wind speed"):
        repo.load("neg.csv")
    field = repo.load("neg.csv", allow_negative=True)
    assert isinstance(field, ResidualField)
    assert field.values.min() == -0.5


def test_duplicate_and_incomplete_rows(repo, tmp_path):
    _write(tmp_path / "dup.csv", CSV_HEADER + "0,0,0,2001-01-01,1\n0,0,0,2001-01-01,2\n")
    with pytest.raises(DataError, match="duplicate site id 0"):
        repo.load("dup.csv")
    _write(tmp_path / "hole.csv", CSV_HEADER + "\n".join([
        "0,0,0,2001-01-01,1", "0,0,0,2001-01-02,1", "1,1,0,2001-01-01,1",
    ]) + "\n")
    with pytest.raises(DataError, match="row/column count mismatch"):
        repo.load("hole.csv")


def test_non_consecutive_days(repo, tmp_path):
    _write(tmp_path / "gap.csv", CSV_HEADER + "0,0,0,2001-01-01,1\n0,0,0,2001-01-03,1\n")
    with pytest.raises(DataError, match="consécutifs"):
        repo.load("gap.csv")


def test_packed_file_size_is_checked(repo, tmp_path):
    repo.save(make_field(np.ones((2, 5))), "w.bin")
    raw = (tmp_path / "w.bin").read_bytes()
    (tmp_path / "cut.bin").write_bytes(raw[:-8])
    with pytest.raises(DataError, match="row/column count mismatch"):
        repo.load("cut.bin")
    (tmp_path / "magic.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(DataError, match="malformed header"):
        repo.load("magic.bin")


def test_missing_file(repo):
    with pytest.raises(DataError, match="introuvable"):
        repo.load("nope.csv")


def test_sites_round_trip(repo, small_coords):
    field = make_field(np.ones((9, 3)), coords=small_coords)
    repo.save_sites(field.sites, "sites.csv")
    sites = repo.load_sites("sites.csv")
    assert [s.id for s in sites] == list(range(9))
    np.testing.assert_array_equal([[s.lon, s.lat] for s in sites], small_coords)


# -----------------------------
# Artefacts JSON
# -----------------------------
def test_fits_round_trip_with_meta(tmp_path, rng, small_coords):
    field = seasonal_wind(rng, small_coords, 400)
    mean_fit = fit_mean(field, K=2)
    ar = fit_ar(mean_residuals(field, mean_fit), P=2, threads=1)

    ClimatologyRepository(tmp_path).save("clim", mean_fit, seed=7)
    ARRepository(tmp_path).save("ar", ar)
    assert read_json(tmp_path / "clim.json")["meta"] == {"seed": 7}

    again = ClimatologyRepository(tmp_path).load("clim")
    np.testing.assert_allclose(again.evaluate(field.calendar), mean_fit.evaluate(field.calendar))
    np.testing.assert_allclose(ARRepository(tmp_path).load("ar").phi, ar.phi)


def test_covariance_repository_keeps_model_kind(tmp_path):
    repo = CovarianceRepository(tmp_path)
    repo.save("cov", MaternParams(sigma2=1.5, rho=0.2, nu=1.5))
    model = repo.load("cov")
    assert isinstance(model, MaternParams) and model.nu == 1.5


def test_malformed_artifact(tmp_path):
    (tmp_path / "clim.json").write_text(json.dumps({"K": 1}), encoding="utf-8")
    with pytest.raises(DataError, match="mal formé"):
        ClimatologyRepository(tmp_path).load("clim")
    (tmp_path / "list.json").write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(DataError, match="objet JSON racine"):
        read_json(tmp_path / "list.json")


def test_clusters_csv_and_json(tmp_path):
    repo = ClusterRepository(tmp_path)
    assignment = ClusterAssignment.from_labels(np.array([2, 0, 2, 1]))
    repo.save_csv(assignment, "clusters.csv")
    text = (tmp_path / "clusters.csv").read_text(encoding="utf-8").splitlines()
    assert text[0] == "site_id,cluster_id"
    again = repo.load_any("clusters.csv")
    np.testing.assert_array_equal(again.sizes(), assignment.sizes())
    repo.save("clusters", assignment)
    np.testing.assert_array_equal(repo.load_any("clusters.json").labels, assignment.labels)


# -----------------------------
# Entrées énergie
# -----------------------------
def test_energy_inputs(tmp_path):
    curves = load_power_curves(_write(tmp_path / "curves.csv", (
        "turbine,hub_height_m,rotor_d_m,rated_kw,cut_in,rated_speed,cut_out,points\n"
        "A,80,90,2000,3,12,25,\n"
        "B,100,110,3000,3,11,25,4:100;8:900\n"
    )))
    assert set(curves) == {"A", "B"}
    assert curves["A"].points is None
    assert curves["B"].points == [(4.0, 100.0), (8.0, 900.0)]

    farms = load_farms(_write(tmp_path / "farms.csv",
                              "site_id,turbine,count,tariff_per_kwh\n0,A,10,0.08\n3,B,2,0.1\n"))
    assert [(f.site_id, f.turbine, f.turbine_count) for f in farms] == [(0, "A", 10), (3, "B", 2)]

    profiles = load_profiles(_write(tmp_path / "profiles.csv",
                                    "site_id,date,height_m,speed_mps\n0,2001-01-01,10,3.2\n"))
    assert profiles["site_id"].dtype.kind == "i"


def test_energy_input_errors(tmp_path):
    with pytest.raises(DataError, match=":1: malformed header"):
        load_farms(_write(tmp_path / "f.csv", "site,turbine,count,tariff\n0,A,1,0.1\n"))
    with pytest.raises(DataError, match=r"c\.csv:3: courbe invalide"):
        load_power_curves(_write(tmp_path / "c.csv", (
            "turbine,hub_height_m,rotor_d_m,rated_kw,cut_in,rated_speed,cut_out\n"
            "A,80,90,2000,3,12,25\n"
            "B,80,90,2000,13,12,25\n"
        )))
    with pytest.raises(DataError, match="dupliquée"):
        load_power_curves(_write(tmp_path / "d.csv", (
            "turbine,hub_height_m,rotor_d_m,rated_kw,cut_in,rated_speed,cut_out\n"
            "A,80,90,2000,3,12,25\n"
            "A,80,90,2000,3,12,25\n"
        )))
