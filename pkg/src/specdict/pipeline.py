"""Desk-scale experiment pipeline: simulate a population of two-well systems,
estimate their operators, learn a dictionary, and evaluate short-trajectory
estimation and regime-switch detection.

Every stage reads and writes plain files under one output directory, so the
command line can run stages separately.  All outputs are deterministic for a
fixed configuration except the ``wall_time_ms`` column of ``results.csv``.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .dictionary import (
    Dictionary,
    TrainConfig,
    estimate_short_trajectory,
    fit_coefficients,
    rolling_coefficients,
    train_dictionary,
)
from .errors import InvalidInput, IoError, SpecDictError
from .estimators import (
    RffMap,
    RrrConfig,
    estimate_operator,
    featurize_trajectory,
    linear_dl_baseline,
    linear_dl_estimate,
    mean_reconstruction_baseline,
    median_bandwidth,
    rrr_estimate,
)
from .langevin import SimConfig, Trajectory, TwoWellPotential, simulate, simulate_switching, switches_json
from .sgot import SgotConfig, pairwise_distances, sgot_divergence
from .spectral_core import SpectralDecomposition, assemble_operator, spectral_decompose

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "SPECDICT_OUTPUT_ROOT"
METHODS = ("doodl", "rrr", "linear_dl", "mean_recon")
W_SAMPLING_STREAM = 1 << 20
SWITCH_STREAM = 1 << 16

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2

DEFAULT_CONFIG = {
    "seed": 0,
    "output_dir": None,
    "population": {"n_train": 32, "n_test": 16, "w_min": 0.5, "w_max": 1.2, "w_values": []},
    "sim": {"sigma": 0.5, "dt": 0.01, "n_samples": 8000},
    "rff": {"num_features": 100, "bandwidth": None, "bandwidth_windows": 1000},
    "rrr": {"rank": 3, "tikhonov": 1e-6, "window": 50},
    "sgot": {"eta": 0.25, "q": 2, "projector_metric": "log_martin", "delta_clamp": 1e-12},
    "train": {
        "d": 4, "epochs": 3, "batch_size": 32, "coeff_lr": 0.5, "coeff_iters": 100,
        "dict_lr": 1e-2, "est_iters": 100, "est_lr": 0.5,
    },
    "eval": {"prefixes": [], "n_prefixes": 20, "min_prefix": 100, "methods": list(METHODS)},
    "switches": {
        "w_a": 0.5, "w_b": 1.2, "n_switches": 3, "regime_samples": 3000,
        "windows": [10, 100, 1000], "strides": [], "burn_in": 0,
    },
}


# --------------------------------------------------------------------------
# schemas and file helpers


def load_schema(name: str) -> dict:
    text = resources.files("specdict").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def validate_json(obj, schema_name: str) -> None:
    jsonschema.validate(obj, load_schema(schema_name))


def _parse_cell(v: str):
    if v == "":
        return None
    try:
        return float(v)
    except ValueError:
        return v


def validate_csv(text: str, schema_name: str) -> None:
    """Check every data row of a CSV against a row schema (numbers parsed as floats)."""
    schema = load_schema(schema_name)
    validator = jsonschema.Draft202012Validator(schema)
    rows = csv.reader(io.StringIO(text))
    header = next(rows)
    required = schema.get("x-leading-columns", [])
    if header[: len(required)] != required:
        raise jsonschema.ValidationError(f"CSV header {header[:len(required)]} != {required}")
    for row in rows:
        validator.validate(dict(zip(header, (_parse_cell(v) for v in row))))


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    raise TypeError(f"not serializable: {type(o)}")


def _clean(obj):
    """NaN/inf to None so the JSON stays standard."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), indent=1, sort_keys=True, default=_json_default) + "\n"


def write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_text(path: Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def write_json(path: Path, obj, schema_name: str | None = None) -> None:
    text = dumps_json(obj)
    if schema_name:
        validate_json(json.loads(text), schema_name)
    write_text(path, text)


def write_csv(path: Path, header, rows, schema_name: str | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    text = buf.getvalue()
    if schema_name:
        validate_csv(text, schema_name)
    write_text(path, text)
    return text


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return v


# --------------------------------------------------------------------------
# configuration


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_override(cfg: dict, assignment: str) -> None:
    """Apply one ``key.path=value`` override; the value is parsed as YAML."""
    if "=" not in assignment:
        raise InvalidInput(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise InvalidInput(f"unknown config section {part!r} in {key!r}")
        node = node[part]
    if parts[-1] not in node:
        raise InvalidInput(f"unknown config key {key!r}")
    node[parts[-1]] = yaml.safe_load(raw)


@dataclass
class ExperimentConfig:
    data: dict

    @classmethod
    def load(cls, path=None, overrides=(), seed=None) -> "ExperimentConfig":
        cfg = copy.deepcopy(DEFAULT_CONFIG)
        if path is not None:
            user = yaml.safe_load(read_text(Path(path))) or {}
            if not isinstance(user, dict):
                raise InvalidInput("config file must contain a mapping")
            cfg = _deep_merge(cfg, user)
        for ov in overrides:
            apply_override(cfg, ov)
        if seed is not None:
            cfg["seed"] = int(seed)
        out = cls(cfg)
        out.validate()
        return out

    def validate(self) -> None:
        try:
            validate_json(self.data, "config")
        except jsonschema.ValidationError as exc:
            raise InvalidInput(f"invalid config: {exc.message}") from exc
        pop = self.data["population"]
        if pop["w_min"] > pop["w_max"]:
            raise InvalidInput("population.w_min exceeds w_max")
        if pop["n_train"] < self.data["train"]["d"]:
            raise InvalidInput("population.n_train must be at least train.d")
        grid = self.prefix_grid()
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise InvalidInput("eval.prefixes must be strictly increasing")
        # constructing the sub-configs checks their own invariants
        self.sim(), self.rrr(), self.sgot(), self.train()

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def output_dir(self, override=None) -> Path:
        root = override or self.data.get("output_dir") or os.environ.get(OUTPUT_ROOT_ENV) or "specdict_out"
        return Path(root)

    def sim(self) -> SimConfig:
        s = self.data["sim"]
        return SimConfig(sigma=s["sigma"], dt=s["dt"], n_samples=s["n_samples"], seed=self.seed)

    def rrr(self) -> RrrConfig:
        return RrrConfig(**self.data["rrr"])

    def sgot(self) -> SgotConfig:
        return SgotConfig.from_dict(self.data["sgot"])

    def train(self) -> TrainConfig:
        t = {k: v for k, v in self.data["train"].items() if k != "d"}
        return TrainConfig(seed=self.seed, **t)

    def prefix_grid(self) -> list:
        ev = self.data["eval"]
        if ev["prefixes"]:
            return [int(x) for x in ev["prefixes"]]
        n = self.data["sim"]["n_samples"]
        lo = min(ev["min_prefix"], n)
        grid = np.unique(np.round(np.geomspace(lo, n, ev["n_prefixes"])).astype(int))
        return [int(x) for x in grid]


# --------------------------------------------------------------------------
# stages


def population(cfg: ExperimentConfig) -> list:
    pop = cfg.data["population"]
    n_train, n_test = pop["n_train"], pop["n_test"]
    n = n_train + n_test
    if pop["w_values"]:
        ws = [float(pop["w_values"][k % len(pop["w_values"])]) for k in range(n)]
    else:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(W_SAMPLING_STREAM,)))
        ws = [float(w) for w in rng.uniform(pop["w_min"], pop["w_max"], size=n)]
    out = []
    for k in range(n):
        split = "train" if k < n_train else "test"
        idx = k if k < n_train else k - n_train
        out.append({"id": f"{split}_{idx:03d}", "split": split, "w": ws[k], "stream": k + 1})
    return out


def run_simulate(cfg: ExperimentConfig, out: Path) -> int:
    sim = cfg.sim()
    systems = population(cfg)
    for s in systems:
        traj = simulate(TwoWellPotential(s["w"]), sim, stream=s["stream"])
        s["n_samples"] = len(traj)
        s["events"] = traj.events
        write_text(out / "trajectories" / f"{s['id']}.csv", traj.to_csv())
    manifest = {"seed": cfg.seed, "sim": cfg.data["sim"], "systems": systems}
    write_json(out / "manifest.json", manifest, "manifest")
    return EXIT_OK


def _manifest(out: Path) -> dict:
    return json.loads(read_text(out / "manifest.json"))


def load_trajectory(out: Path, system_id: str) -> Trajectory:
    return Trajectory.from_csv(read_text(out / "trajectories" / f"{system_id}.csv"))


def load_operator(path: Path) -> tuple[dict, SpectralDecomposition]:
    data = json.loads(read_text(path))
    return data, SpectralDecomposition.from_dict(data["decomposition"])


def load_rff(out: Path) -> RffMap:
    return RffMap.from_dict(json.loads(read_text(out / "rff.json")))


def run_estimate(cfg: ExperimentConfig, out: Path) -> int:
    manifest = _manifest(out)
    systems = manifest["systems"]
    trajs = {s["id"]: load_trajectory(out, s["id"]) for s in systems}
    rrr = cfg.rrr()
    rcfg = cfg.data["rff"]
    if rcfg["bandwidth"] is None:
        train = [trajs[s["id"]] for s in systems if s["split"] == "train"] or list(trajs.values())
        bandwidth = median_bandwidth(train, rrr.window, rcfg["bandwidth_windows"], cfg.seed)
        rule = "median_heuristic"
    else:
        bandwidth, rule = float(rcfg["bandwidth"]), "config"
    rff = RffMap(rrr.window, rcfg["num_features"], bandwidth, cfg.seed)
    write_json(out / "rff.json", {**rff.to_dict(), "bandwidth_rule": rule}, "rff")
    failed = []
    for s in systems:
        try:
            feats = featurize_trajectory(trajs[s["id"]], rff, dt=cfg.data["sim"]["dt"])
            sd = estimate_operator(feats, rrr)
        except SpecDictError as exc:
            log.error("estimation failed for %s: %s", s["id"], exc)
            failed.append({"id": s["id"], "error": type(exc).__name__, "message": str(exc)})
            continue
        record = {
            "id": s["id"], "split": s["split"], "w": s["w"], "reference": True,
            "rank": rrr.rank, "decomposition": sd.to_dict(),
        }
        write_json(out / "operators" / f"{s['id']}.json", record, "operator")
    write_json(out / "estimate_report.json", {"failed": failed, "n_systems": len(systems)}, "estimate_report")
    return EXIT_PARTIAL if failed else EXIT_OK


def _operators(out: Path, split: str | None = None):
    recs = []
    for s in _manifest(out)["systems"]:
        if split is not None and s["split"] != split:
            continue
        path = out / "operators" / f"{s['id']}.json"
        if path.exists():
            recs.append(load_operator(path))
    return recs


def coefficients_csv(path: Path, ids, coeffs, d: int) -> None:
    header = ["id"] + [f"alpha_{j + 1}" for j in range(d)] + ["loss"]
    rows = [[i] + [float(a) for a in c.alpha] + [float(c.loss)] for i, c in zip(ids, coeffs)]
    write_csv(path, header, rows, "codes")


def run_train_dict(cfg: ExperimentConfig, out: Path, d: int | None = None) -> int:
    d = int(cfg.data["train"]["d"] if d is None else d)
    recs = _operators(out, "train")
    if len(recs) < d:
        raise InvalidInput(f"need at least {d} training operators, found {len(recs)}")
    ids = [r[0]["id"] for r in recs]
    ops = [r[1] for r in recs]
    tcfg = cfg.train()
    dictionary = train_dictionary(ops, d, tcfg, cfg.sgot())
    codes = fit_coefficients(ops, dictionary, tcfg)
    dictionary.metadata.update(
        {
            "train_ids": ids,
            "final_loss": float(np.mean([c.loss for c in codes])),
            "source": "train-dict",
        }
    )
    write_json(out / "dictionary.json", dictionary.to_dict(), "dictionary")
    n_batches = math.ceil(len(ops) / tcfg.batch_size)
    rows = [[k, k // n_batches, float(v)] for k, v in enumerate(dictionary.loss_curve)]
    write_csv(out / "loss_curve.csv", ["step", "epoch", "batch_loss"], rows, "loss_curve")
    coefficients_csv(out / "train_codes.csv", ids, codes, d)
    return EXIT_OK


def load_dictionary(path: Path) -> Dictionary:
    return Dictionary.from_dict(json.loads(read_text(path)))


RESULTS_HEADER = [
    "system_id", "method", "prefix_len", "sgot_error", "leading_eigval_abs_error", "wall_time_ms", "error",
]


class _Evaluator:
    """Shared state for one eval-short sweep."""

    def __init__(self, cfg: ExperimentConfig, out: Path, dictionary: Dictionary, methods):
        self.cfg = cfg
        self.out = out
        self.dictionary = dictionary
        self.sgot = dictionary.sgot
        self.rrr = cfg.rrr()
        self.tcfg = cfg.train()
        self.rff = load_rff(out)
        self.methods = methods
        train = _operators(out, "train")
        self.ldict = None
        self.mean_recon = None
        if "linear_dl" in methods:
            mats = [assemble_operator(sd) for _, sd in train]
            self.ldict = linear_dl_baseline(mats, dictionary.d, cfg.seed)
        if "mean_recon" in methods:
            codes = fit_coefficients([sd for _, sd in train], dictionary, self.tcfg)
            self.mean_recon = mean_reconstruction_baseline(dictionary, codes)

    def cell(self, feats, method: str) -> SpectralDecomposition:
        if method == "doodl":
            return estimate_short_trajectory(feats, self.dictionary, self.tcfg)[1]
        if method == "rrr":
            return spectral_decompose(rrr_estimate(feats, self.rrr), self.rrr.rank)
        if method == "linear_dl":
            return linear_dl_estimate(feats, self.ldict, self.rrr.rank)[1]
        if method == "mean_recon":
            return self.mean_recon
        raise InvalidInput(f"unknown method {method!r}")

    def run_system(self, task):
        system_id, prefixes = task
        _, ref = load_operator(self.out / "operators" / f"{system_id}.json")
        traj = load_trajectory(self.out, system_id)
        rows = []
        for method in self.methods:
            for prefix in prefixes:
                t0 = time.perf_counter()
                try:
                    feats = featurize_trajectory(traj.x[:prefix], self.rff, dt=traj.dt)
                    est = self.cell(feats, method)
                    err = sgot_divergence(est, ref, self.sgot)
                    eig = float(abs(est.eigvals[0] - ref.eigvals[0]))
                    tag = ""
                except (SpecDictError, np.linalg.LinAlgError) as exc:
                    err = eig = float("nan")
                    tag = type(exc).__name__
                ms = (time.perf_counter() - t0) * 1e3
                rows.append([system_id, method, int(prefix), err, eig, ms, tag])
        return rows


def _summary(rows) -> dict:
    groups = {}
    for r in rows:
        groups.setdefault((r[1], r[2]), []).append(r)
    out = []
    for (method, prefix), rs in sorted(groups.items(), key=lambda kv: (METHODS.index(kv[0][0]), kv[0][1])):
        s = np.array([r[3] for r in rs], dtype=float)
        e = np.array([r[4] for r in rs], dtype=float)
        ok = np.isfinite(s)
        out.append(
            {
                "method": method,
                "prefix_len": int(prefix),
                "n": len(rs),
                "n_failed": int((~ok).sum()),
                "sgot_error_mean": float(s[ok].mean()) if ok.any() else None,
                "sgot_error_median": float(np.median(s[ok])) if ok.any() else None,
                "eig_error_mean": float(e[ok].mean()) if ok.any() else None,
                "eig_error_median": float(np.median(e[ok])) if ok.any() else None,
            }
        )
    return {"rows": out}


def run_eval_short(cfg: ExperimentConfig, out: Path, dictionary_path: Path | None = None, threads: int = 1) -> int:
    dictionary = load_dictionary(dictionary_path or out / "dictionary.json")
    methods = list(cfg.data["eval"]["methods"])
    ev = _Evaluator(cfg, out, dictionary, methods)
    n = cfg.data["sim"]["n_samples"]
    prefixes = [p for p in cfg.prefix_grid() if p <= n]
    tests = [s["id"] for s in _manifest(out)["systems"] if s["split"] == "test"]
    tasks = [(sid, prefixes) for sid in tests]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_system = list(pool.map(ev.run_system, tasks))
    else:
        per_system = [ev.run_system(t) for t in tasks]
    rows = [r for rs in per_system for r in rs]
    rows.sort(key=lambda r: (r[0], METHODS.index(r[1]), r[2]))
    write_csv(out / "results.csv", RESULTS_HEADER, rows, "results")
    write_json(out / "summary.json", _summary(rows), "summary")
    failed = sum(1 for r in rows if r[6])
    if failed:
        log.warning("%d of %d evaluation cells failed", failed, len(rows))
    return EXIT_PARTIAL if failed else EXIT_OK


# --------------------------------------------------------------------------
# regime switches


def window_center(start, window: int, embed: int):
    """Center (in trajectory samples) of a window of ``window`` feature rows starting at ``start``."""
    return np.asarray(start) + (window + embed - 2) / 2.0


def crossing_times(starts, alpha1, window: int, embed: int, level: float = 0.5):
    """Centers of the windows at which ``alpha1`` moves to the other side of ``level``."""
    a = np.asarray(alpha1) - level
    side = a > 0
    idx = np.nonzero(side[1:] != side[:-1])[0] + 1
    return window_center(np.asarray(starts)[idx], window, embed)


def regime_stds(starts, alpha1, window: int, embed: int, bounds, burn_in: int = 0):
    """Std of ``alpha1`` over windows lying entirely inside each regime."""
    starts = np.asarray(starts)
    a = np.asarray(alpha1)
    span_end = starts + window + embed - 2
    out = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        m = (starts >= lo + burn_in) & (span_end < hi)
        out.append(float(a[m].std()) if m.sum() >= 2 else None)
    return out


def run_detect_switches(
    cfg: ExperimentConfig, out: Path, dictionary_path: Path | None = None, windows=None
) -> int:
    dictionary = load_dictionary(dictionary_path or out / "dictionary.json")
    rff = load_rff(out)
    sw = cfg.data["switches"]
    windows = [int(w) for w in (windows or sw["windows"])]
    strides = sw["strides"] or [max(1, w // 10) for w in windows]
    if len(strides) != len(windows):
        raise InvalidInput("switches.strides must match switches.windows")
    ws = [sw["w_a"] if k % 2 == 0 else sw["w_b"] for k in range(sw["n_switches"] + 1)]
    regimes = [(TwoWellPotential(w), sw["regime_samples"]) for w in ws]
    traj, switches = simulate_switching(regimes, cfg.sim(), stream_offset=SWITCH_STREAM)
    sdir = out / "switches"
    write_text(sdir / "trajectory.csv", traj.to_csv())
    write_json(sdir / "switches.json", json.loads(switches_json(switches, regimes)), "switches")
    feats = featurize_trajectory(traj, rff, dt=traj.dt)
    embed = rff.input_dim
    bounds = [0] + list(switches) + [len(traj)]
    tcfg = cfg.train()
    report = []
    for window, stride in zip(windows, strides):
        rc = rolling_coefficients(feats, dictionary, window, stride, tcfg)
        starts = [s for s, _ in rc]
        alphas = np.array([c.alpha for _, c in rc])
        header = ["t"] + [f"alpha_{j + 1}" for j in range(dictionary.d)] + ["loss"]
        rows = [[s] + [float(a) for a in c.alpha] + [float(c.loss)] for s, c in rc]
        write_csv(sdir / f"coeffs_w{window}.csv", header, rows, "coeffs")
        cross = crossing_times(starts, alphas[:, 0], window, embed)
        latencies = [float(np.min(np.abs(cross - t))) if len(cross) else None for t in switches]
        stds = regime_stds(starts, alphas[:, 0], window, embed, bounds, sw["burn_in"])
        valid = [s for s in stds if s is not None]
        report.append(
            {
                "window": window,
                "stride": stride,
                "n_windows": len(rc),
                "crossings": [float(c) for c in cross],
                "switch_latency": latencies,
                "detected": [lat is not None and lat <= window for lat in latencies],
                "regime_alpha1_std": stds,
                "mean_regime_alpha1_std": float(np.mean(valid)) if valid else None,
            }
        )
    write_json(
        sdir / "report.json",
        {"switch_indices": list(switches), "embed_window": embed, "time_stamp": "window_center", "windows": report},
        "switch_report",
    )
    return EXIT_OK


# --------------------------------------------------------------------------
# distances


def run_distance_matrix(paths, sgot: SgotConfig, out_csv: Path) -> int:
    ids, sds = [], []
    for p in paths:
        data, sd = load_operator(Path(p))
        ids.append(str(data.get("id", Path(p).stem)))
        sds.append(sd)
    if len({(sd.p, sd.r) for sd in sds}) > 1:
        raise InvalidInput("operators have mixed (p, r)")
    dist = pairwise_distances(sds, sgot)
    rows = [[i] + [float(v) for v in row] for i, row in zip(ids, dist)]
    write_csv(out_csv, ["id"] + ids, rows, "distance")
    return EXIT_OK
