"""Station/record tables, CSV ingestion and dense-GP simulation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from qpgp.errors import InvalidInputError
from qpgp.geometry import EARTH_RADIUS_KM, project_latlon
from qpgp.kernels import POSTERIOR_MEANS, KernelSpec, final_model, gram

STATION_COLUMNS = ("id", "lat", "lon")
RECORD_COLUMNS = ("station_id", "timestamp", "ozone", "RH", "TMP")
COVARIATES = ("RH", "TMP")
DEFAULT_EPOCH = "2017-04-01T00:00"
MAX_DENSE_POINTS = 3000
ALIGN_TOL_MIN = 1.0
FLOAT_FORMAT = "%.12g"


def _rows(mask) -> list[int]:
    return (np.flatnonzero(np.asarray(mask)) + 2).tolist()[:20]  # 1-based file lines after the header


def _require(df: pd.DataFrame, cols, what: str):
    missing = [c for c in cols if c not in df.columns]
    if missing:
        raise InvalidInputError(f"{what} is missing column(s): {', '.join(missing)}")


def _numeric(df: pd.DataFrame, col: str, what: str) -> np.ndarray:
    v = pd.to_numeric(df[col], errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(v)
    if bad.any():
        raise InvalidInputError(f"{what}: column {col!r} is not a finite number at lines {_rows(bad)}")
    return v


def epoch_hours(ts, epoch) -> np.ndarray:
    delta = (pd.DatetimeIndex(ts) - pd.Timestamp(epoch)) / pd.Timedelta(hours=1)
    return np.asarray(delta, dtype=float)


@dataclass
class Dataset:
    """Validated stations and hourly records sorted by (timestamp, station)."""

    stations: pd.DataFrame
    records: pd.DataFrame
    epoch: pd.Timestamp

    @property
    def n(self) -> int:
        return len(self.records)

    @property
    def station_xy(self) -> np.ndarray:
        return self.stations[["x_km", "y_km"]].to_numpy()

    @property
    def center(self) -> tuple[float, float]:
        return float(self.stations["lat"].mean()), float(self.stations["lon"].mean())

    @property
    def xy(self) -> np.ndarray:
        return self.records[["x_km", "y_km"]].to_numpy()

    @property
    def t(self) -> np.ndarray:
        return self.records["t"].to_numpy(dtype=float)

    @property
    def y(self) -> np.ndarray:
        """Square-root ozone."""
        return np.sqrt(self.records["ozone"].to_numpy(dtype=float))

    @property
    def X(self) -> np.ndarray:
        r = self.records
        return np.column_stack([np.ones(len(r))] + [r[c].to_numpy(dtype=float) for c in COVARIATES])

    def subset(self, mask) -> "Dataset":
        return Dataset(self.stations, self.records[np.asarray(mask)].reset_index(drop=True), self.epoch)

    def covariates_at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Station coordinates and (RH, TMP) of every record at hour ``t``."""
        sel = np.abs(self.t - t) < 1e-9
        return self.xy[sel], self.records.loc[sel, list(COVARIATES)].to_numpy(dtype=float)

    def write(self, out: Path):
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        self.stations[list(STATION_COLUMNS)].to_csv(out / "stations.csv", index=False, float_format=FLOAT_FORMAT)
        rec = self.records[list(RECORD_COLUMNS)].copy()
        rec["timestamp"] = pd.DatetimeIndex(rec["timestamp"]).strftime("%Y-%m-%dT%H:%M")
        rec.to_csv(out / "records.csv", index=False, float_format=FLOAT_FORMAT)


def build_dataset(stations: pd.DataFrame, records: pd.DataFrame, epoch=None) -> Dataset:
    """Validate tables and attach projected coordinates and epoch hours."""
    _require(stations, STATION_COLUMNS, "stations")
    _require(records, RECORD_COLUMNS, "records")
    st = stations[list(STATION_COLUMNS)].copy()
    st["id"] = st["id"].astype(str)
    if st["id"].duplicated().any():
        raise InvalidInputError(f"stations: duplicate id at lines {_rows(st['id'].duplicated())}")
    lat, lon = _numeric(st, "lat", "stations"), _numeric(st, "lon", "stations")
    xy = project_latlon(lat, lon)
    st["lat"], st["lon"], st["x_km"], st["y_km"] = lat, lon, xy[:, 0], xy[:, 1]

    rec = records[list(RECORD_COLUMNS)].copy()
    rec["station_id"] = rec["station_id"].astype(str)
    unknown = ~rec["station_id"].isin(st["id"])
    if unknown.any():
        raise InvalidInputError(f"records: unknown station_id at lines {_rows(unknown)}")
    ts = pd.to_datetime(rec["timestamp"], errors="coerce", format="ISO8601")
    if ts.isna().any():
        raise InvalidInputError(f"records: unparseable timestamp at lines {_rows(ts.isna())}")
    hour = ts.dt.round("h")
    off = np.abs((ts - hour) / pd.Timedelta(minutes=1)).to_numpy()
    if (off > ALIGN_TOL_MIN).any():
        raise InvalidInputError(f"records: timestamps not on the hour at lines {_rows(off > ALIGN_TOL_MIN)}")
    rec["timestamp"] = hour
    for c in ("ozone",) + COVARIATES:
        rec[c] = _numeric(rec, c, "records")
    if (rec["ozone"] < 0).any():
        raise InvalidInputError(f"records: negative ozone at lines {_rows(rec['ozone'] < 0)}")
    dup = rec.duplicated(["station_id", "timestamp"], keep=False)
    if dup.any():
        raise InvalidInputError(f"records: duplicate (station_id, timestamp) at lines {_rows(dup)}")
    if len(rec) == 0:
        raise InvalidInputError("records: no rows")

    epoch = pd.Timestamp(epoch) if epoch is not None else hour.min().floor("D")
    rec["t"] = epoch_hours(rec["timestamp"], epoch)
    loc = st.set_index("id")
    rec["x_km"] = loc.loc[rec["station_id"], "x_km"].to_numpy()
    rec["y_km"] = loc.loc[rec["station_id"], "y_km"].to_numpy()
    rec = rec.sort_values(["timestamp", "station_id"], kind="stable").reset_index(drop=True)
    return Dataset(st.reset_index(drop=True), rec, epoch)


def ingest(stations_path, records_path, epoch=None) -> Dataset:
    try:
        st = pd.read_csv(stations_path, dtype={"id": str})
        rec = pd.read_csv(records_path, dtype={"station_id": str})
    except (OSError, pd.errors.ParserError) as exc:
        raise InvalidInputError(f"cannot read input CSV: {exc}") from exc
    return build_dataset(st, rec, epoch)


# --------------------------------------------------------------------------
# simulation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SimulationConfig:
    n_stations: int = 10
    hours: int = 240
    box_km: float = 40.0
    center: tuple[float, float] = (19.43, -99.13)
    kernel: KernelSpec = final_model()
    beta: tuple[float, ...] = POSTERIOR_MEANS["beta"]
    tau2: float = POSTERIOR_MEANS["tau2"]
    epoch: str = DEFAULT_EPOCH

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        d = dict(d)
        if "kernel" in d:
            d["kernel"] = KernelSpec.from_dict(d["kernel"])
        for k in ("beta", "center"):
            if k in d:
                d[k] = tuple(float(v) for v in d[k])
        return cls(**d)


def diurnal_covariates(t, rng: np.random.Generator) -> np.ndarray:
    """Synthetic (RH, TMP) with an afternoon temperature peak and humidity trough."""
    c = np.cos(2 * np.pi * (np.asarray(t) - 15.0) / 24.0)
    rh = np.clip(55.0 - 20.0 * c + rng.normal(0.0, 5.0, len(c)), 5.0, 100.0)
    tmp = 18.0 + 7.0 * c + rng.normal(0.0, 1.0, len(c))
    return np.column_stack([rh, tmp])


@dataclass
class Simulation:
    dataset: Dataset
    w: np.ndarray
    y: np.ndarray
    truth: dict


def simulate(cfg: SimulationConfig, seed: int = 0) -> Simulation:
    """Dense Cholesky draw of the latent field on a station-by-hour grid plus ``x'beta`` and noise.

    Values are on the square-root scale; the stored ozone is their square.
    """
    n = cfg.n_stations * cfg.hours
    if n > MAX_DENSE_POINTS:
        raise InvalidInputError(
            f"{cfg.n_stations} stations x {cfg.hours} hours = {n} points exceeds the dense limit of "
            f"{MAX_DENSE_POINTS}; use fewer stations or hours"
        )
    if cfg.n_stations < 1 or cfg.hours < 1:
        raise InvalidInputError("n_stations and hours must be positive")
    if len(cfg.beta) != 1 + len(COVARIATES):
        raise InvalidInputError(f"beta needs {1 + len(COVARIATES)} entries")
    if cfg.tau2 < 0:
        raise InvalidInputError("tau2 must be nonnegative")
    rng = np.random.default_rng(seed)
    lat0, lon0 = cfg.center
    half = cfg.box_km / 2
    dx, dy = rng.uniform(-half, half, (2, cfg.n_stations))
    lat = lat0 + np.degrees(dy / EARTH_RADIUS_KM)
    lon = lon0 + np.degrees(dx / (EARTH_RADIUS_KM * np.cos(np.radians(lat0))))
    ids = [f"S{k:02d}" for k in range(cfg.n_stations)]
    stations = pd.DataFrame({"id": ids, "lat": lat, "lon": lon})
    sxy = project_latlon(lat, lon)

    hours = np.arange(cfg.hours, dtype=float)
    t = np.repeat(hours, cfg.n_stations)
    xy = np.tile(sxy, (cfg.hours, 1))
    X = np.column_stack([np.ones(n), diurnal_covariates(t, rng)])
    z = rng.standard_normal(n)
    if cfg.kernel.sigma2 > 0:
        K = gram(cfg.kernel, (xy, t))
        K[np.diag_indices(n)] += 1e-8 * cfg.kernel.sigma2
        w = np.linalg.cholesky(K) @ z
    else:
        w = np.zeros(n)
    y = X @ np.asarray(cfg.beta) + w + np.sqrt(cfg.tau2) * rng.standard_normal(n)

    epoch = pd.Timestamp(cfg.epoch)
    records = pd.DataFrame({
        "station_id": np.tile(ids, cfg.hours),
        "timestamp": epoch + pd.to_timedelta(t, unit="h"),
        "ozone": y**2,
        "RH": X[:, 1],
        "TMP": X[:, 2],
    })
    ds = build_dataset(stations, records, epoch)
    truth = {
        "kernel": cfg.kernel.to_dict(),
        "beta": list(cfg.beta),
        "tau2": cfg.tau2,
        "sigma2": cfg.kernel.sigma2,
        "n_stations": cfg.n_stations,
        "hours": cfg.hours,
        "epoch": str(epoch.isoformat()),
        "seed": seed,
    }
    return Simulation(ds, w, y, truth)


def write_simulation(sim: Simulation, out: Path):
    out = Path(out)
    sim.dataset.write(out)
    lat = pd.DataFrame({
        "station_id": sim.dataset.records["station_id"],
        "t": sim.dataset.t,
        "w": sim.w,
        "y_sqrt": sim.y,
    })
    lat.to_csv(out / "latent.csv", index=False, float_format="%.17g")
    (out / "truth.json").write_text(json.dumps(sim.truth, indent=2, sort_keys=True) + "\n")
