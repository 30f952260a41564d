"""Command line front end: ``qpgp <command> --config FILE [--seed N] [--out DIR]``.

Every command reads a JSON config, writes CSV/JSON outputs plus a
``manifest.json`` into the output directory, and is a pure function of its
inputs, config and seed. Relative paths in a config resolve against the
config file's directory; missing upstream directories default to the
output directory, so one ``--out`` chains the whole pipeline.
"""

from __future__ import annotations

import os

if "QPGP_THREADS" in os.environ:  # must precede the numpy import
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["QPGP_THREADS"])

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from qpgp import __version__
from qpgp import compliance, data, inference, kernels, nngp, predict, scoring
from qpgp.errors import InvalidInputError, InvalidParameterError, NumericalError
from qpgp.geometry import project_latlon, unproject_xy

log = logging.getLogger("qpgp")

COMMANDS = ("simulate", "fit", "predict", "score", "assess", "validate-kernel")
FIT_KEYS = ("data", "kernel", "neighbors", "mcmc", "holdout")
DRAW_FORMAT = "%.17g"
REPORT_FORMAT = "%.10g"


class ConfigError(InvalidInputError):
    pass


# --------------------------------------------------------------------------
# config and manifest helpers
# --------------------------------------------------------------------------


def config_hash(cfg: dict, keys=None) -> str:
    part = cfg if keys is None else {k: cfg[k] for k in keys if k in cfg}
    return hashlib.sha256(json.dumps(part, sort_keys=True).encode()).hexdigest()


def load_config(path: Path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def _block(cfg: dict, name: str, allowed: set[str]) -> dict:
    b = cfg.get(name, {})
    if not isinstance(b, dict):
        raise ConfigError(f"config block {name!r} must be an object")
    extra = set(b) - allowed
    if extra:
        raise ConfigError(f"config block {name!r} has unknown keys: {sorted(extra)}")
    return b


class Run:
    """Resolved paths, seed and output bookkeeping for one command."""

    def __init__(self, command: str, cfg: dict, config_path: Path, seed: int | None, out: str | None):
        self.command = command
        self.cfg = cfg
        self.base = Path(config_path).resolve().parent
        self.seed = int(seed if seed is not None else cfg.get("seed", 0))
        out = out if out is not None else cfg.get("out")
        if out is None:
            raise ConfigError("no output directory: pass --out or set 'out' in the config")
        self.out = self.path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []
        self.t0 = time.perf_counter()

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else (self.base / p)

    def upstream(self, value) -> Path:
        return self.out if value is None else self.path(value)

    def write_csv(self, df: pd.DataFrame, name: str, float_format: str = REPORT_FORMAT):
        df.to_csv(self.out / name, index=False, float_format=float_format, lineterminator="\n")
        self.outputs.append(name)

    def write_json(self, obj, name: str):
        (self.out / name).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
        self.outputs.append(name)

    def write_text(self, text: str, name: str):
        (self.out / name).write_text(text)
        self.outputs.append(name)

    def manifest(self, extra: dict | None = None):
        files = {n: hashlib.sha256((self.out / n).read_bytes()).hexdigest() for n in self.outputs}
        m = {
            "command": self.command,
            "config_sha256": config_hash(self.cfg),
            "seed": self.seed,
            "versions": {
                "qpgp": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "pandas": pd.__version__,
                "scipy": __import__("scipy").__version__,
                "numba": __import__("numba").__version__,
            },
            "wall_time_s": round(time.perf_counter() - self.t0, 3),
            "outputs": files,
        }
        if extra:
            m.update(extra)
        name = "manifest.json" if self.command == "fit" else f"manifest_{self.command}.json"
        (self.out / name).write_text(json.dumps(m, indent=2, sort_keys=True) + "\n")


def kernel_from_config(b: dict) -> kernels.KernelSpec:
    """``{"model": k}`` picks a compared model; otherwise a full spec dict. ``params``/``sigma2`` override."""
    b = dict(b) if b else {"model": 7}
    try:
        if "model" in b:
            spec = kernels.compared_model(int(b.pop("model")))
            upd = b.pop("params", {})
            sigma2 = b.pop("sigma2", None)
            fixed = b.pop("fixed", None)
            if b:
                raise ConfigError(f"kernel block has unknown keys: {sorted(b)}")
            spec = spec.with_params(upd, sigma2=None if sigma2 is None else float(sigma2))
            if fixed is not None:
                spec = kernels.KernelSpec(spec.family, spec.params, spec.sigma2, spec.members,
                                          frozenset(fixed) | spec.fixed)
            return spec
        return kernels.KernelSpec.from_dict(b)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"invalid kernel block: {exc}") from exc


def neighbors_from_config(b: dict | None, prediction: bool = False) -> nngp.NeighborSpec:
    b = dict(b or {})
    preset = b.pop("preset", None)
    if preset == "model4":
        base = nngp.NeighborSpec.model4().to_dict()
    elif preset in (None, "default"):
        base = (nngp.NeighborSpec.for_prediction() if prediction else nngp.NeighborSpec()).to_dict()
    else:
        raise ConfigError(f"unknown neighbor preset {preset!r}")
    if prediction:
        base["max_neighbors"] = nngp.NeighborSpec.for_prediction().max_neighbors
    base.update(b)
    try:
        return nngp.NeighborSpec.from_dict(base)
    except TypeError as exc:
        raise ConfigError(f"invalid neighbors block: {exc}") from exc


def mcmc_from_config(b: dict, seed: int) -> inference.MCMCConfig:
    b = dict(b)
    priors = inference.Priors(**b.pop("priors", {}))
    allowed = {"iterations", "burn_in", "thin", "store_w", "init"}
    if set(b) - allowed:
        raise ConfigError(f"mcmc block has unknown keys: {sorted(set(b) - allowed)}")
    return inference.MCMCConfig(seed=seed, priors=priors, **b)


def load_dataset(run: Run) -> data.Dataset:
    b = _block(run.cfg, "data", {"dir", "stations", "records", "epoch"})
    d = run.upstream(b.get("dir"))
    st = run.path(b["stations"]) if "stations" in b else d / "stations.csv"
    rec = run.path(b["records"]) if "records" in b else d / "records.csv"
    if not st.exists() or not rec.exists():
        raise InvalidInputError(f"input data not found ({st}, {rec}); run 'qpgp simulate' or set the data block")
    return data.ingest(st, rec, b.get("epoch"))


def holdout_mask(ds: data.Dataset, b: dict | None, seed: int) -> np.ndarray:
    if not b:
        return np.zeros(ds.n, dtype=bool)
    return scoring.holdout_hours(ds.t, float(b.get("fraction", 0.2)), int(b.get("seed", seed)))


# --------------------------------------------------------------------------
# draws persistence
# --------------------------------------------------------------------------


def save_fit(run: Run, ds: data.Dataset, ref: nngp.ReferenceSet, draws: inference.PosteriorDraws,
             template: kernels.KernelSpec, nspec: nngp.NeighborSpec, held: np.ndarray):
    run.write_csv(pd.DataFrame(draws.values, columns=draws.names), "draws.csv", DRAW_FORMAT)
    if draws.w is not None:
        run.write_csv(pd.DataFrame(draws.w, columns=[f"w{i}" for i in range(ref.n)]), "w_draws.csv", DRAW_FORMAT)
    run.write_csv(pd.DataFrame({"x_km": ref.xy[:, 0], "y_km": ref.xy[:, 1], "t": ref.t, "input_row": ref.order}),
                  "reference.csv", DRAW_FORMAT)
    hold = ds.records.loc[held, list(data.RECORD_COLUMNS)].copy()
    hold["timestamp"] = pd.DatetimeIndex(hold["timestamp"]).strftime("%Y-%m-%dT%H:%M")
    run.write_csv(hold, "holdout.csv", DRAW_FORMAT)
    run.write_json({
        "kernel": template.to_dict(),
        "neighbors": nspec.to_dict(),
        "period": ref.period,
        "epoch": ds.epoch.isoformat(),
        "fit_config_sha256": config_hash(run.cfg, FIT_KEYS),
        "meta": draws.meta,
    }, "fit.json")


class FitArtifacts:
    def __init__(self, d: Path):
        if not (d / "fit.json").exists():
            raise InvalidInputError(f"no fit found in {d}; run 'qpgp fit' first")
        self.dir = d
        self.info = json.loads((d / "fit.json").read_text())
        self.template = kernels.KernelSpec.from_dict(self.info["kernel"])
        vals = pd.read_csv(d / "draws.csv")
        w = pd.read_csv(d / "w_draws.csv").to_numpy() if (d / "w_draws.csv").exists() else None
        self.draws = inference.PosteriorDraws(list(vals.columns), vals.to_numpy(dtype=float), w, self.info["meta"])
        r = pd.read_csv(d / "reference.csv")
        self.ref = nngp.ReferenceSet(r[["x_km", "y_km"]].to_numpy(), r["t"].to_numpy(dtype=float),
                                     r["input_row"].to_numpy(), float(self.info["period"]))
        self.holdout = pd.read_csv(d / "holdout.csv", dtype={"station_id": str})


def fit_model(ds: data.Dataset, train: np.ndarray, template, nspec, mcmc_cfg, progress=None):
    xy, t = ds.xy[train], ds.t[train]
    ref = nngp.build_reference((xy, t))
    graph = nngp.build_neighbors(ref, nspec)
    md = inference.ModelData(ref.to_reference(ds.y[train]), ref.to_reference(ds.X[train]))
    draws = inference.run_mcmc(md, ref, graph, template, mcmc_cfg, progress=progress)
    return ref, draws


def target_design(ds: data.Dataset, xy: np.ndarray, t: np.ndarray) -> np.ndarray:
    X = np.empty((len(t), 1 + len(data.COVARIATES)))
    X[:, 0] = 1.0
    cache: dict[float, tuple] = {}
    for k in range(len(t)):
        if t[k] not in cache:
            cache[t[k]] = ds.covariates_at(t[k])
        sxy, vals = cache[t[k]]
        if len(sxy) == 0:
            raise InvalidInputError(f"no station records at hour {t[k]:g} to interpolate covariates from")
        X[k, 1:] = predict.interpolate_covariates(xy[k], sxy, vals)
    return X


def _progress(every: int = 500):
    def cb(it, state):
        if it % every == 0:
            log.info("iteration %d: tau2 %.4g sigma2 %.4g", it, state.tau2, state.sigma2)
    return cb


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_simulate(run: Run) -> int:
    b = _block(run.cfg, "simulate", {"n_stations", "hours", "box_km", "center", "kernel", "beta", "tau2", "epoch"})
    b = dict(b)
    if "kernel" in b:
        b["kernel"] = kernel_from_config(b["kernel"]).to_dict()
    sim = data.simulate(data.SimulationConfig.from_dict(b), run.seed)
    data.write_simulation(sim, run.out)
    run.outputs += ["stations.csv", "records.csv", "latent.csv", "truth.json"]
    run.manifest()
    log.info("simulated %d records into %s", sim.dataset.n, run.out)
    return 0


def cmd_fit(run: Run) -> int:
    for name in ("data", "kernel", "neighbors", "mcmc", "holdout"):
        if name in run.cfg and not isinstance(run.cfg[name], dict):
            raise ConfigError(f"config block {name!r} must be an object")
    ds = load_dataset(run)
    template = kernel_from_config(run.cfg.get("kernel", {}))
    nspec = neighbors_from_config(run.cfg.get("neighbors"))
    mcfg = mcmc_from_config(run.cfg.get("mcmc", {}), run.seed)
    held = holdout_mask(ds, run.cfg.get("holdout"), run.seed)
    if held.all():
        raise InvalidInputError("holdout leaves no training records")
    ref, draws = fit_model(ds, ~held, template, nspec, mcfg, _progress())
    save_fit(run, ds, ref, draws, template, nspec, held)
    run.write_csv(draws.summary().reset_index(names="parameter"), "summary.csv")
    run.manifest({"acceptance": draws.meta.get("acceptance")})
    print(draws.summary().to_string())
    return 0


def _targets(run: Run, b: dict, ds: data.Dataset, fit: FitArtifacts):
    if "targets" in b:
        tb = pd.read_csv(run.path(b["targets"]))
        missing = [c for c in ("lon", "lat", "timestamp") if c not in tb.columns]
        if missing:
            raise InvalidInputError(f"targets file is missing column(s): {', '.join(missing)}")
        xy = project_latlon(tb["lat"].to_numpy(float), tb["lon"].to_numpy(float), ds.center)
        t = data.epoch_hours(pd.to_datetime(tb["timestamp"], format="ISO8601"), ds.epoch)
        return xy, t, tb.get("station_id", pd.Series([""] * len(t))).astype(str).to_numpy()
    if "grid" in b:
        g = b["grid"]
        t0 = data.epoch_hours([pd.Timestamp(g["start"])], ds.epoch)[0]
        t1 = data.epoch_hours([pd.Timestamp(g["end"])], ds.epoch)[0]
        xy, t = predict.grid_targets(ds.station_xy, float(g["resolution_km"]), np.arange(t0, t1 + 0.5),
                                     hull=bool(b.get("hull_check", True)))
        return xy, t, np.array([""] * len(t))
    if len(fit.holdout) == 0:
        raise InvalidInputError("no targets: set predict.targets or predict.grid, or fit with a holdout block")
    h = data.build_dataset(ds.stations[list(data.STATION_COLUMNS)], fit.holdout, ds.epoch)
    return h.xy, h.t, h.records["station_id"].to_numpy()


def cmd_predict(run: Run) -> int:
    b = _block(run.cfg, "predict", {"fit_dir", "targets", "grid", "hull_check", "neighbors", "write_draws",
                                    "exclude_coincident"})
    fit = FitArtifacts(run.upstream(b.get("fit_dir")))
    if any(k in run.cfg for k in FIT_KEYS) and config_hash(run.cfg, FIT_KEYS) != fit.info["fit_config_sha256"]:
        warnings.warn("config differs from the one used for fitting (hash mismatch)", UserWarning, stacklevel=1)
        log.warning("config hash mismatch between fit and predict")
    ds = load_dataset(run)
    xy, t, sid = _targets(run, b, ds, fit)
    X = target_design(ds, xy, t)
    task = predict.PredictionTask((xy, t), neighbors_from_config(b.get("neighbors"), prediction=True),
                                  hull_check=bool(b.get("hull_check", True)),
                                  exclude_coincident=bool(b.get("exclude_coincident", True)))
    pd_ = predict.posterior_predictive(task, fit.draws, fit.ref, fit.template, X, ds.station_xy, seed=run.seed)
    ll = unproject_xy(xy, ds.center)
    ts = (ds.epoch + pd.to_timedelta(t, unit="h")).strftime("%Y-%m-%dT%H:%M")
    summ = pd_.summary()
    targets = pd.DataFrame({"target": np.arange(len(t)), "station_id": sid, "lon": ll[:, 1], "lat": ll[:, 0],
                            "x_km": xy[:, 0], "y_km": xy[:, 1], "timestamp": ts, "t": t})
    run.write_csv(targets, "targets.csv", DRAW_FORMAT)
    run.write_csv(targets[["target", "station_id", "lon", "lat", "timestamp"]].assign(**summ), "predictions.csv")
    if b.get("write_draws", True):
        run.write_csv(pd.DataFrame(pd_.observable, columns=[f"p{k}" for k in range(len(t))]),
                      "predictive_draws.csv", DRAW_FORMAT)
    run.manifest({"n_targets": int(len(t)), "n_draws": int(pd_.observable.shape[0])})
    return 0


def cmd_score(run: Run) -> int:
    b = _block(run.cfg, "score", {"models", "alpha"})
    models = b.get("models") or [{"name": "model", "kernel": run.cfg.get("kernel", {})}]
    ds = load_dataset(run)
    hb = run.cfg.get("holdout") or {"fraction": 0.2}
    held = holdout_mask(ds, hb, run.seed)
    if not held.any() or held.all():
        raise InvalidInputError("holdout must keep some records on each side")
    mcfg = mcmc_from_config(run.cfg.get("mcmc", {}), run.seed)
    hx, ht = ds.xy[held], ds.t[held]
    X = target_design(ds, hx, ht)
    y_obs = ds.records.loc[held, "ozone"].to_numpy(dtype=float)
    reports = []
    for k, m in enumerate(models):
        name = m.get("name", f"model{k + 1}")
        template = kernel_from_config(m.get("kernel", {}))
        nspec = neighbors_from_config(m.get("neighbors", run.cfg.get("neighbors")))
        log.info("scoring %s", name)
        ref, draws = fit_model(ds, ~held, template, nspec, mcfg, _progress())
        task = predict.PredictionTask((hx, ht), neighbors_from_config(m.get("prediction_neighbors"), True),
                                      hull_check=False)
        pd_ = predict.posterior_predictive(task, draws, ref, template, X, seed=run.seed)
        reports.append(scoring.score_holdout(name, pd_.observable, y_obs, ht, float(b.get("alpha", 0.1))))
    run.write_csv(pd.DataFrame([r.as_row() for r in reports]), "scores.csv")
    table = scoring.format_table(reports)
    run.write_text(table + "\n", "scores.txt")
    run.manifest({"n_holdout": int(held.sum())})
    print(table)
    return 0


def cmd_assess(run: Run) -> int:
    b = _block(run.cfg, "assess", {"predict_dir", "limits", "risk", "level"})
    d = run.upstream(b.get("predict_dir"))
    if not (d / "predictive_draws.csv").exists():
        raise InvalidInputError(f"no predictive draws in {d}; run 'qpgp predict' with write_draws first")
    tg = pd.read_csv(d / "targets.csv", dtype={"station_id": str})
    draws = pd.read_csv(d / "predictive_draws.csv").to_numpy(dtype=float)
    ts = pd.to_datetime(tg["timestamp"], format="ISO8601")
    day0 = ts.min().floor("D")
    hours = data.epoch_hours(ts, day0)
    locs, loc_idx = np.unique(tg[["x_km", "y_km"]].to_numpy(), axis=0, return_inverse=True)
    uh, hour_idx = np.unique(hours, return_inverse=True)
    cube = np.full((draws.shape[0], len(locs), len(uh)), np.nan)
    cube[:, loc_idx.ravel(), hour_idx] = draws
    if np.isnan(cube).any():
        raise InvalidInputError("targets must form a complete location-by-hour grid for assessment")
    limits = compliance.RegulatoryLimits(**b.get("limits", {}))
    risk = compliance.RiskParams(**b.get("risk", {}))
    rep = compliance.posterior_compliance(cube, uh, limits, risk, float(b.get("level", 0.95)))
    first = tg.groupby(loc_idx.ravel())[["lon", "lat"]].first().to_numpy()
    loc_df = rep.location_frame(xy=locs, lonlat=first)
    dates = (day0 + pd.to_timedelta(rep.days, unit="D")).strftime("%Y-%m-%d")
    loc_df["day"] = np.tile(dates, len(locs))
    city = rep.city_frame()
    city["day"] = dates
    run.write_csv(loc_df, "compliance_locations.csv")
    run.write_csv(city, "compliance_city.csv")
    run.manifest({"limits": rep.meta["limits"], "risk": rep.meta["risk"]})
    return 0


def cmd_validate_kernel(run: Run) -> int:
    b = _block(run.cfg, "validate", {"families", "models", "n_designs", "n_points", "box_km", "days"})
    fams = b.get("families", "all")
    fams = sorted(kernels.FAMILIES) if fams == "all" else list(fams)
    specs = [(f, kernels.default_spec(f)) for f in fams]
    specs += [(f"model{k}", kernels.compared_model(k)) for k in b.get("models", [])]
    rows = []
    for name, spec in specs:
        r = kernels.validate_psd(spec, int(b.get("n_designs", 200)), int(b.get("n_points", 40)), seed=run.seed,
                                 box_km=float(b.get("box_km", 60.0)), days=float(b.get("days", 61.0)))
        rows.append({"kernel": name, "n_designs": r.n_designs, "n_points": r.n_points,
                     "worst_ratio": r.worst_ratio, "failures": len(r.failures), "passed": r.passed})
        log.info("%s: worst %.3g, %d failures", name, r.worst_ratio, len(r.failures))
    df = pd.DataFrame(rows)
    run.write_csv(df, "psd_report.csv")
    run.manifest()
    print(df.to_string(index=False))
    return 0 if df["passed"].all() else 1


HANDLERS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "score": cmd_score,
    "assess": cmd_assess,
    "validate-kernel": cmd_validate_kernel,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qpgp", description="Quasi-periodic space-time NNGP pipeline")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--out", default=None, help="output directory (overrides the config 'out')")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"qpgp {__version__}")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(Path(args.config))
        run = Run(args.command, cfg, Path(args.config), args.seed, args.out)
        return HANDLERS[args.command](run)
    except (InvalidInputError, InvalidParameterError, NumericalError) as exc:
        print(f"qpgp {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
