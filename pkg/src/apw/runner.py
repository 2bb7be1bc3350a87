"""Seeded experiment orchestration, artifact layout and the verification suite.

A run directory looks like::

    <output_dir>/summary.json
    <output_dir>/seed_<s>/epochs.csv      one row per epoch
    <output_dir>/seed_<s>/run.json        resolved e, q and final metrics
    <output_dir>/seed_<s>/bounds.json     bound checks from the live trace
    <output_dir>/seed_<s>/trace.npz       alphas, betas, Z, gamma, rho
    <output_dir>/seed_<s>/checkpoints.bin parameter vectors per epoch
    <output_dir>/seed_<s>/losses.csv      mean training loss per checkpoint
    <output_dir>/seed_<s>/model.bin       final parameters
    <output_dir>/seed_<s>/weights.bin     final sample weights
    <output_dir>/seed_<s>/train.csv, test.csv, dataset.json

Every seed feeds four PRNG streams built as ``default_rng([seed, offset])``
so that, for example, toggling mixup leaves the data untouched.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import datasets as ds
from .errors import APWError, ConfigError, InvalidInputError
from .models import LogisticModel, OptimizerConfig, SoftmaxMLP
from .pd import CheckpointSeries, analyze, write_checkpoints, write_loss_history, read_checkpoints
from .scheduler import SchedulerConfig
from .theory import (
    BoundConfig,
    BoundReport,
    Check,
    TheoryTrace,
    convergence_window,
    default_theta,
    lemma4_check,
    theorem2_bound,
    theorem3_check,
)
from .training import EPOCH_COLUMNS, Variant, train

log = logging.getLogger(__name__)

STREAM_DATA, STREAM_SHUFFLE, STREAM_MIX, STREAM_INIT = 0, 1, 2, 3

DEFAULTS = {
    "dataset": {
        "generator": "gaussian_2class",
        "n": 600,
        "std": 1.5,
        "center_range": [-10.0, 10.0],
        "n_features": 2,
        "n_classes": 2,
        "spread": 4.0,
        "path": None,
        "test_path": None,
        "split": [0.7, 0.3],
        "noise": {"kind": "none", "p_noise": 0.0},
    },
    "model": {"kind": "logistic", "hidden": [32]},
    "optimizer": {
        "kind": "lbfgs",
        "step": 0.01,
        "grad_tol": 1e-5,
        "max_iter": 150,
        "lbfgs_history": 10,
        "epochs": 30,
        "batch_size": 32,
    },
    "scheduler": {
        "e_mode": "default-rule",
        "e": None,
        "q_mode": "epochs-multiple",
        "q": None,
        "q_factor": 1.0,
        "tau": 0.5,
        "rho_clip": [1e-4, 1.0 - 1e-4],
    },
    "variant": "APW-E",
    "sapw_fraction": 0.05,
    "mix_alpha": 1.0,
    "eval_threshold": None,
    "theta": None,
    "seeds": [0],
    "output_dir": "runs/default",
    "checkpoint_stride": 1,
    "pd_include_bias": True,
    "best_checkpoint": False,
}

E_MODES = ("fixed", "default-rule", "pd-estimated")
Q_MODES = ("fixed", "epochs-multiple", "train-fraction")


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[k] = _merge(base[k], v, where + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        cfg = cls(_merge(DEFAULTS, d))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def with_overrides(self, pairs) -> "ExperimentConfig":
        """Apply ``key.sub=value`` overrides; values are parsed as JSON when possible."""
        d = copy.deepcopy(self.raw)
        for item in pairs:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            key, val = item.split("=", 1)
            try:
                parsed = json.loads(val)
            except json.JSONDecodeError:
                parsed = val
            node, parts = d, key.split(".")
            for p in parts[:-1]:
                if p not in node or not isinstance(node[p], dict):
                    raise ConfigError(f"unknown config key {key!r}")
                node = node[p]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[parts[-1]] = parsed
        return ExperimentConfig.from_dict(d)

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)

    def validate(self) -> None:
        r = self.raw
        seeds = r["seeds"]
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
            raise ConfigError("seeds must be a non-empty list of non-negative integers")
        if len(set(seeds)) != len(seeds):
            raise ConfigError("seeds must be distinct")
        Variant.parse(r["variant"])
        self.optimizer()
        s = r["scheduler"]
        if s["e_mode"] not in E_MODES:
            raise ConfigError(f"scheduler.e_mode must be one of {E_MODES}")
        if s["e_mode"] == "fixed" and s["e"] is None:
            raise ConfigError("scheduler.e is required when e_mode is 'fixed'")
        if s["q_mode"] not in Q_MODES:
            raise ConfigError(f"scheduler.q_mode must be one of {Q_MODES}")
        if s["q_mode"] == "fixed" and s["q"] is None:
            raise ConfigError("scheduler.q is required when q_mode is 'fixed'")
        if r["model"]["kind"] not in ("logistic", "mlp"):
            raise ConfigError("model.kind must be 'logistic' or 'mlp'")
        if r["dataset"]["generator"] not in ("gaussian_2class", "gaussian_blobs", "file"):
            raise ConfigError("dataset.generator must be gaussian_2class, gaussian_blobs or file")
        if r["dataset"]["generator"] == "file" and not r["dataset"]["path"]:
            raise ConfigError("dataset.path is required for generator 'file'")
        ds.NoiseSpec(**r["dataset"]["noise"])
        if not isinstance(r["checkpoint_stride"], int) or r["checkpoint_stride"] < 1:
            raise ConfigError("checkpoint_stride must be a positive integer")
        if r["eval_threshold"] is not None and not r["eval_threshold"] > 0:
            raise ConfigError("eval_threshold must be > 0")
        for key in ("pd_include_bias", "best_checkpoint"):
            if not isinstance(r[key], bool):
                raise ConfigError(f"{key} must be true or false")
        if r["theta"] is not None and not r["theta"] > 0:
            raise ConfigError("theta must be > 0")

    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(**self.raw["optimizer"])

    @property
    def variant(self) -> Variant:
        return Variant.parse(self.raw["variant"])

    @property
    def eval_threshold(self) -> float:
        v = self.raw["eval_threshold"]
        return math.log(2.0) if v is None else float(v)

    def output_dir(self) -> Path:
        out = Path(self.raw["output_dir"])
        root = os.environ.get("APW_OUTPUT_ROOT")
        if root and not out.is_absolute():
            out = Path(root) / out
        return out


def seed_streams(seed: int) -> dict:
    return {
        "data": np.random.default_rng([seed, STREAM_DATA]),
        "shuffle": np.random.default_rng([seed, STREAM_SHUFFLE]),
        "mix": np.random.default_rng([seed, STREAM_MIX]),
        "init": np.random.default_rng([seed, STREAM_INIT]),
    }


def build_data(cfg: ExperimentConfig, rng: np.random.Generator):
    """Return ``(train, test)`` datasets; noise is injected into training labels only."""
    d = cfg.raw["dataset"]
    if d["generator"] == "file":
        train_set = ds.read_csv(d["path"])
        test_set = ds.read_csv(d["test_path"]) if d["test_path"] else None
        if test_set is None:
            parts = ds.split(train_set, d["split"], rng)
            train_set, test_set = parts[0], (parts[1] if len(parts) > 1 else None)
    else:
        if d["generator"] == "gaussian_2class":
            full = ds.gen_gaussian_2class(d["n"], d["std"], tuple(d["center_range"]), rng, n_features=d["n_features"])
        else:
            full = ds.gen_gaussian_blobs(d["n"], d["n_classes"], d["n_features"], d["std"], d["spread"], rng)
        parts = ds.split(full, d["split"], rng)
        train_set, test_set = parts[0], (parts[1] if len(parts) > 1 else None)
    noise = ds.NoiseSpec(**d["noise"])
    if noise.kind != "none" and noise.p_noise > 0:
        C = max(int(train_set.y.max()) + 1, int(d["n_classes"]))
        y_noisy, _ = ds.inject_uniform_noise(train_set.y, noise.p_noise, C, rng)
        train_set = ds.LabeledDataset(train_set.X, y_noisy, train_set.y, {**train_set.meta, "noise": d["noise"]})
    return train_set, test_set


def build_model(cfg: ExperimentConfig, train_set, rng: np.random.Generator):
    m = cfg.raw["model"]
    if m["kind"] == "logistic":
        return LogisticModel(train_set.n_features)
    C = max(int(train_set.y.max()) + 1, int(cfg.raw["dataset"]["n_classes"]))
    return SoftmaxMLP([train_set.n_features, *m["hidden"], C], rng=rng)


def resolve_q(cfg: ExperimentConfig, n_train: int) -> float:
    s = cfg.raw["scheduler"]
    if s["q_mode"] == "fixed":
        q = float(s["q"])
    elif s["q_mode"] == "epochs-multiple":
        q = float(s["q_factor"]) * cfg.optimizer().n_epochs
    else:
        q = float(math.floor(float(s["q_factor"]) * n_train))
    if not q >= 2:
        raise ConfigError(f"resolved q = {q} is below 2")
    return q


def _eval_sets(test_set):
    return {} if test_set is None else {"test": (test_set.X, test_set.y)}


def resolve_e(cfg: ExperimentConfig, seed: int, train_set, test_set, q: float) -> tuple[float, dict]:
    s = cfg.raw["scheduler"]
    if s["e_mode"] == "fixed":
        return float(s["e"]), {}
    if s["e_mode"] == "default-rule":
        return ds.default_threshold(ds.NoiseSpec(**cfg.raw["dataset"]["noise"])), {}
    # vanilla pre-run on identical data with its own fresh streams
    streams = seed_streams(seed)
    model = build_model(cfg, train_set, streams["init"])
    pre = train(
        model, train_set.X, train_set.y, cfg.optimizer(), "vanilla", None,
        rng_shuffle=streams["shuffle"], rng_mix=streams["mix"], checkpoint_stride=cfg.raw["checkpoint_stride"],
    )
    vectors = pre.checkpoint_array
    if not cfg.raw["pd_include_bias"]:
        vectors = vectors[:, ~model.bias_mask()]
    series = CheckpointSeries(vectors, np.asarray(pre.checkpoint_losses))
    res = analyze(series)
    if not res.e_estimate > 0:
        raise ConfigError(f"estimated threshold {res.e_estimate} is not positive")
    return res.e_estimate, {"t_star": res.t_star, "e_estimate": res.e_estimate}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_epochs_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPOCH_COLUMNS)
        for rec in records:
            w.writerow([_fmt(rec[c]) for c in EPOCH_COLUMNS])


def read_epochs_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidInputError(f"{path}: empty epoch table")
    header = rows[0]
    missing = [c for c in EPOCH_COLUMNS if c not in header]
    if missing:
        raise InvalidInputError(f"{path}: missing columns {missing}")
    cols = {c: np.array([float(r[header.index(c)]) for r in rows[1:]], dtype=np.float64) for c in header}
    return cols


def resolve_theta(trace: TheoryTrace, theta):
    """Configured theta, or the smallest gamma of the trailing convergence window."""
    window = convergence_window(trace)
    if theta is None and window is not None:
        theta = default_theta(trace, window)
    return theta, window


def monitor_bounds(trace: TheoryTrace, records, e: float, q: float, theta=None) -> BoundReport:
    """Bound checks recomputable from stored artifacts (trace plus epoch table)."""
    rep = BoundReport()
    rep.extend(theorem2_bound(trace, q))
    theta, window = resolve_theta(trace, theta)
    if theta is None:
        rep.checks.append(Check("margin_fraction", None, None, None, ">=", None, note="no convergence window: theta undefined"))
    else:
        use_window = window if window is not None and window[0] > 0 else None
        rep.extend(theorem3_check(trace, BoundConfig(theta, use_window), q))
        if window is not None:
            K, d = window
            rep.extend(lemma4_check(trace.gamma_history[K:K + d], q, [theta]))
    # hard mass against reweighted loss, straight from the epoch table
    hm = np.asarray(records["hard_mass"], dtype=np.float64)
    la = np.asarray(records["L_apw"], dtype=np.float64)
    ep = np.asarray(records["epoch"]).astype(int)
    for k in range(hm.size):
        if math.isnan(hm[k]):
            continue
        ok = bool(hm[k] < la[k] / e) if hm[k] > 0 else True
        rep.checks.append(Check("hard_mass_bound", int(ep[k]), float(hm[k]), float(la[k] / e), "<", ok,
                                note="" if hm[k] > 0 else "no hard samples"))
    if trace.exact_chain and len(trace) == hm.size and len(trace) > 1:
        B = trace.beta_matrix()
        for k in range(len(trace) - 1):
            same = np.array_equal(B[k] < 0, B[k + 1] < 0)
            nr = trace.rho_raw[k + 1]
            rep.checks.append(
                Check("next_rho_bound", k + 1, float(nr), float(la[k] / e), "<",
                      (nr < la[k] / e or not (B[k] < 0).any()) if same else None,
                      note="" if same else "hard set changed")
            )
    return rep


def _records_as_columns(records) -> dict:
    return {c: np.array([r[c] for r in records], dtype=np.float64) for c in EPOCH_COLUMNS}


def run_seed(cfg: ExperimentConfig, seed: int, out_root: Path) -> dict:
    out = out_root / f"seed_{seed}"
    out.mkdir(parents=True, exist_ok=True)
    streams = seed_streams(seed)
    train_set, test_set = build_data(cfg, streams["data"])
    q = resolve_q(cfg, len(train_set))
    e, pd_info = resolve_e(cfg, seed, train_set, test_set, q)
    s = cfg.raw["scheduler"]
    sched = SchedulerConfig(e=e, q=q, tau=float(s["tau"]), rho_clip=tuple(s["rho_clip"]))
    model = build_model(cfg, train_set, streams["init"])
    res = train(
        model, train_set.X, train_set.y, cfg.optimizer(), cfg.variant, sched,
        eval_sets=_eval_sets(test_set), eval_threshold=cfg.eval_threshold,
        rng_shuffle=streams["shuffle"], rng_mix=streams["mix"],
        sapw_fraction=float(cfg.raw["sapw_fraction"]), mix_alpha=float(cfg.raw["mix_alpha"]),
        checkpoint_stride=cfg.raw["checkpoint_stride"],
    )
    theta, _ = resolve_theta(res.trace, cfg.raw["theta"])
    bounds = monitor_bounds(res.trace, _records_as_columns(res.records), e, q, theta)

    files = {
        "epochs": "epochs.csv",
        "run": "run.json",
        "bounds": "bounds.json",
        "trace": "trace.npz",
        "checkpoints": "checkpoints.bin",
        "losses": "losses.csv",
        "model": "model.bin",
        "weights": "weights.bin",
        "train": "train.csv",
        "dataset_meta": "dataset.json",
    }
    write_epochs_csv(out / files["epochs"], res.records)
    ds.write_csv(train_set, out / files["train"], out / files["dataset_meta"])
    if test_set is not None:
        files["test"] = "test.csv"
        ds.write_csv(test_set, out / files["test"])
    np.savez(out / files["trace"], **res.trace.to_arrays())
    if res.checkpoints:
        write_checkpoints(out / files["checkpoints"], res.checkpoint_array)
        write_loss_history(out / files["losses"], res.checkpoint_losses)
    write_checkpoints(out / files["model"], res.model.params[None, :])
    write_checkpoints(out / files["weights"], res.weights[None, :])
    (out / files["bounds"]).write_text(bounds.to_json() + "\n")
    last = res.records[-1] if res.records else {}
    best = {}
    if cfg.raw["best_checkpoint"] and test_set is not None and res.checkpoints:
        best = best_checkpoint(res, test_set, cfg.raw["checkpoint_stride"])
        write_checkpoints(out / "best_model.bin", res.checkpoints[best["best_index"]][None, :])
        files["best_model"] = "best_model.bin"
    info = {
        "seed": seed,
        "variant": res.variant.name,
        "model": cfg.raw["model"]["kind"],
        "e": e,
        "q": q,
        "tau": sched.tau,
        "theta": theta,
        "eval_threshold": cfg.eval_threshold,
        "exact_chain": res.trace.exact_chain,
        "epochs": len(res.records),
        "converged_epoch": res.converged_epoch,
        "sampling_rounds": res.sampling_rounds,
        "bounds_passed": bounds.passed,
        "final": {k: last.get(k) for k in ("eprop_train", "eprop_test", "tacc_train", "tacc_test", "L_mean")},
        "files": files,
        **{k: v for k, v in best.items() if k != "best_index"},
        **pd_info,
    }
    (out / files["run"]).write_text(json.dumps(_clean(info), indent=2, sort_keys=True) + "\n")
    return info


def best_checkpoint(res, val_set, stride: int = 1) -> dict:
    """Checkpoint with the lowest mean validation loss (earliest on ties)."""
    probe = res.model.copy()
    val = [float(np.mean(probe.losses(val_set.X, val_set.y, params=p))) for p in res.checkpoints]
    i = int(np.argmin(val))
    return {"best_index": i, "best_epoch": (i + 1) * stride, "best_val_loss": val[i]}


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _run_seed_safe(args):
    raw, seed, out_root = args
    cfg = ExperimentConfig(raw)
    try:
        return run_seed(cfg, seed, Path(out_root))
    except APWError as exc:
        log.error("seed %d aborted: %s", seed, exc)
        return {"seed": seed, "error": f"{type(exc).__name__}: {exc}"}


def aggregate(infos) -> dict:
    ok = [i for i in infos if "error" not in i]
    agg = {}
    for key in ("eprop_train", "eprop_test", "tacc_train", "tacc_test"):
        vals = [i["final"][key] for i in ok if isinstance(i["final"].get(key), float) and math.isfinite(i["final"][key])]
        if vals:
            agg[key] = {"mean": float(np.mean(vals)), "std": float(np.std(vals)), "n": len(vals)}
    return agg


def run(cfg: ExperimentConfig, jobs: int = 1) -> dict:
    """Run every seed, write per-seed artifacts and ``summary.json``; return the summary."""
    out_root = cfg.output_dir()
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "config.json").write_text(cfg.to_json() + "\n")
    tasks = [(cfg.raw, s, str(out_root)) for s in cfg.raw["seeds"]]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            infos = list(pool.map(_run_seed_safe, tasks))
    else:
        infos = [_run_seed_safe(t) for t in tasks]
    # fold in seed order regardless of completion order
    infos.sort(key=lambda i: cfg.raw["seeds"].index(i["seed"]))
    summary = {
        "variant": cfg.variant.name,
        "seeds": cfg.raw["seeds"],
        "config": "config.json",
        "runs": [
            {**i, "dir": f"seed_{i['seed']}", "files": {k: f"seed_{i['seed']}/{v}" for k, v in i.get("files", {}).items()}}
            for i in infos
        ],
        "aggregate": aggregate(infos),
        "failed_seeds": [i["seed"] for i in infos if "error" in i],
    }
    (out_root / "summary.json").write_text(json.dumps(_clean(summary), indent=2, sort_keys=True) + "\n")
    return summary


def verify_seed(seed_dir) -> BoundReport:
    seed_dir = Path(seed_dir)
    try:
        info = json.loads((seed_dir / "run.json").read_text())
        with np.load(seed_dir / "trace.npz") as arr:
            trace = TheoryTrace.from_arrays(arr)
        records = read_epochs_csv(seed_dir / "epochs.csv")
    except (OSError, KeyError, ValueError) as exc:
        raise InvalidInputError(f"{seed_dir}: missing or unreadable artifacts ({exc})") from None
    theta = info["theta"]
    rep = monitor_bounds(trace, records, float(info["e"]), float(info["q"]), None if theta is None else float(theta))
    rows = records["epoch"].size
    rep.checks.append(Check("epoch_rows", None, float(rows), float(info["epochs"]), "==", rows == info["epochs"]))
    # the stored Z must agree with the table when both describe applied updates
    if trace.exact_chain and len(trace) == rows:
        z_csv = records["Z"]
        same = bool(np.array_equal(np.asarray(trace.z_history), z_csv))
        rep.checks.append(Check("trace_matches_table", None, None, None, "==", same))
    return rep


def verify(path) -> dict:
    """Re-run the checkers over every seed directory below ``path``."""
    path = Path(path)
    dirs = sorted(p for p in path.glob("seed_*") if p.is_dir()) if not (path / "run.json").exists() else [path]
    if not dirs:
        raise InvalidInputError(f"no run artifacts under {path}")
    return {d.name: verify_seed(d) for d in dirs}


def load_final_params(seed_dir) -> np.ndarray:
    return read_checkpoints(Path(seed_dir) / "model.bin")[0]
