import json

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from qpgp import data as D
from qpgp import kernels as K
from qpgp.errors import InvalidInputError

STATIONS = pd.DataFrame({"id": ["A", "B"], "lat": [19.40, 19.45], "lon": [-99.10, -99.15]})


def records(**over):
    r = pd.DataFrame({
        "station_id": ["A", "B", "A", "B"],
        "timestamp": ["2017-04-01T00:00", "2017-04-01T00:00", "2017-04-01T01:00", "2017-04-01T01:00"],
        "ozone": [16.0, 25.0, 36.0, 49.0],
        "RH": [50.0, 55.0, 60.0, 65.0],
        "TMP": [15.0, 16.0, 17.0, 18.0],
    })
    for k, v in over.items():
        r[k] = v
    return r


def test_well_formed_two_stations():
    ds = D.build_dataset(STATIONS, records())
    assert len(ds.stations) == 2 and ds.n == 4
    assert_allclose(ds.y, [4, 5, 6, 7])
    assert_array_equal(ds.t, [0, 0, 1, 1])
    assert_allclose(ds.X[:, 0], 1.0)
    assert_allclose(ds.X[:, 1:], records()[["RH", "TMP"]].to_numpy())
    assert_allclose(ds.center, (19.425, -99.125))


def test_missing_column_named():
    with pytest.raises(InvalidInputError, match="RH"):
        D.build_dataset(STATIONS, records().drop(columns="RH"))


def test_negative_ozone_rejected_with_line():
    with pytest.raises(InvalidInputError, match=r"negative ozone at lines \[3\]"):
        D.build_dataset(STATIONS, records(ozone=[16.0, -1.0, 36.0, 49.0]))


def test_duplicate_keys_rejected():
    r = records(timestamp=["2017-04-01T00:00"] * 2 + ["2017-04-01T00:00", "2017-04-01T01:00"])
    with pytest.raises(InvalidInputError, match="duplicate"):
        D.build_dataset(STATIONS, r)


@pytest.mark.parametrize(
    "over, msg",
    [
        ({"station_id": ["A", "Z", "A", "B"]}, "unknown station_id"),
        ({"timestamp": ["nope", "2017-04-01T00:00", "2017-04-01T01:00", "2017-04-01T01:00"]}, "timestamp"),
        ({"timestamp": ["2017-04-01T00:20", "2017-04-01T00:00", "2017-04-01T01:00", "2017-04-01T01:00"]}, "hour"),
        ({"TMP": [1.0, "x", 2.0, 3.0]}, "TMP"),
    ],
)
def test_row_level_diagnostics(over, msg):
    with pytest.raises(InvalidInputError, match=msg):
        D.build_dataset(STATIONS, records(**over))


def test_ingest_round_trip(tmp_path):
    ds = D.build_dataset(STATIONS, records())
    ds.write(tmp_path)
    back = D.ingest(tmp_path / "stations.csv", tmp_path / "records.csv")
    assert_allclose(back.y, ds.y)
    assert_allclose(back.xy, ds.xy)
    with pytest.raises(InvalidInputError):
        D.ingest(tmp_path / "missing.csv", tmp_path / "records.csv")


def test_covariates_at_hour():
    ds = D.build_dataset(STATIONS, records())
    xy, v = ds.covariates_at(1.0)
    assert xy.shape == (2, 2)
    assert_allclose(v, [[60, 17], [65, 18]])


def test_simulate_deterministic_mean_only():
    cfg = D.SimulationConfig(n_stations=3, hours=10, kernel=K.final_model(sigma2=0.0), tau2=0.0)
    sim = D.simulate(cfg, seed=1)
    xb = sim.dataset.X @ np.asarray(cfg.beta)
    assert_array_equal(sim.w, 0.0)
    assert_array_equal(sim.dataset.records["ozone"].to_numpy(), xb**2)


def test_simulate_seeded_files_identical(tmp_path):
    cfg = D.SimulationConfig(n_stations=3, hours=12)
    for sub in ("a", "b"):
        D.write_simulation(D.simulate(cfg, seed=5), tmp_path / sub)
    for f in ("stations.csv", "records.csv", "latent.csv", "truth.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    truth = json.loads((tmp_path / "a" / "truth.json").read_text())
    assert truth["tau2"] == cfg.tau2 and truth["seed"] == 5


def test_simulated_latent_variance():
    spec = K.final_model(sigma2=2.0)
    cfg = D.SimulationConfig(n_stations=2, hours=4, kernel=spec)
    w = np.concatenate([D.simulate(cfg, seed=s).w for s in range(600)])
    assert abs(w.var() / 2.0 - 1) < 0.1


def test_simulation_order_matches_records():
    sim = D.simulate(D.SimulationConfig(n_stations=4, hours=6, tau2=0.0), seed=2)
    ds = sim.dataset
    assert_allclose(ds.y, np.abs(sim.y))
    assert np.all(np.diff(ds.t) >= 0)


def test_too_large_grid():
    with pytest.raises(InvalidInputError, match="fewer"):
        D.simulate(D.SimulationConfig(n_stations=30, hours=200))


def test_simulation_config_from_dict():
    cfg = D.SimulationConfig.from_dict({"n_stations": 4, "beta": [1, 2, 3], "kernel": K.compared_model(3).to_dict()})
    assert cfg.beta == (1.0, 2.0, 3.0) and cfg.kernel == K.compared_model(3)
