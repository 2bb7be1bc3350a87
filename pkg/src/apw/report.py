"""Static figures and text tables from finished run directories.

SVG output is byte-stable: the hash salt is fixed and no date is embedded.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import datasets as ds  # noqa: E402
from .errors import InvalidInputError  # noqa: E402
from .models import confidence_band  # noqa: E402
from .pd import read_checkpoints  # noqa: E402
from .runner import read_epochs_csv  # noqa: E402

plt.rcParams["svg.hashsalt"] = "apw-report"


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _load_summary(run_dir):
    p = Path(run_dir) / "summary.json"
    if not p.exists():
        raise InvalidInputError(f"{run_dir}: no summary.json")
    return json.loads(p.read_text())


def _seed_dirs(run_dir, summary):
    return [Path(run_dir) / r["dir"] for r in summary["runs"] if "error" not in r]


def curves(run_dir, column="eprop_test"):
    """Per-seed curves of one epoch-table column, truncated to the shortest run."""
    summary = _load_summary(run_dir)
    rows = [read_epochs_csv(d / "epochs.csv")[column] for d in _seed_dirs(run_dir, summary)]
    if not rows:
        raise InvalidInputError(f"{run_dir}: no successful seeds")
    T = min(r.size for r in rows)
    return np.vstack([r[:T] for r in rows])


def plot_hyperplane(seed_dir, path) -> None:
    """Training points, separating line and the band where loss exceeds e (2-D logistic runs)."""
    seed_dir = Path(seed_dir)
    info = json.loads((seed_dir / "run.json").read_text())
    if info["model"] != "logistic":
        raise InvalidInputError("hyperplane figure needs a logistic model")
    data = ds.read_csv(seed_dir / "train.csv")
    if data.n_features != 2:
        raise InvalidInputError("hyperplane figure needs two features")
    omega = read_checkpoints(seed_dir / "model.bin")[0]
    wfile = seed_dir / "weights.bin"
    weights = read_checkpoints(wfile)[0] if wfile.exists() else np.full(len(data), 1.0 / len(data))
    e = float(info["e"])
    s = 2.0 * data.y - 1.0
    margin = s * (data.X @ omega[:2] + omega[2])
    easy = np.logaddexp(0.0, -margin) <= e
    sizes = 8 + 400 * weights / weights.max()

    fig, ax = plt.subplots(figsize=(5, 5))
    for cls, color in ((0, "tab:blue"), (1, "tab:orange")):
        for mask, marker in ((easy, "o"), (~easy, "x")):
            sel = (data.y == cls) & mask
            ax.scatter(data.X[sel, 0], data.X[sel, 1], s=sizes[sel], c=color, marker=marker, alpha=0.6, linewidths=1)
    lo, hi = data.X[:, 0].min() - 1, data.X[:, 0].max() + 1
    xs = np.linspace(lo, hi, 2)
    if abs(omega[1]) > 1e-12:
        ax.plot(xs, -(omega[0] * xs + omega[2]) / omega[1], "k-", lw=1)
        with np.errstate(all="ignore"):
            m_e = confidence_band(e) if e < math.log(2.0) else 0.0
        for sign in (-1, 1):
            ax.plot(xs, -(omega[0] * xs + omega[2] + sign * m_e) / omega[1], "k--", lw=0.8)
    ax.set_ylim(data.X[:, 1].min() - 1, data.X[:, 1].max() + 1)
    ax.set_title(f"{info['variant']} seed {info['seed']}")
    _save(fig, path)


def plot_curves(run_dirs, path, column="eprop_test", labels=None) -> dict:
    """Mean and one-std band of ``column`` per run directory; returns the plotted data."""
    fig, ax = plt.subplots(figsize=(6, 4))
    out = {}
    for i, rd in enumerate(run_dirs):
        C = curves(rd, column)
        mean, std = C.mean(axis=0), C.std(axis=0)
        t = np.arange(1, mean.size + 1)
        label = labels[i] if labels else Path(rd).name
        ax.plot(t, mean, label=label, lw=1)
        ax.fill_between(t, mean - std, mean + std, alpha=0.2)
        out[label] = {"mean": mean.tolist(), "std": std.tolist()}
    ax.set_xlabel("epoch")
    ax.set_ylabel(column)
    ax.legend(fontsize=7)
    _save(fig, path)
    return out


def summary_table(run_dirs) -> str:
    lines = [f"{'run':<24}{'variant':<12}{'q':>8}{'e':>10}  {'eprop_test':>18}  {'tacc_test':>18}"]
    for rd in run_dirs:
        summ = _load_summary(rd)
        ok = [r for r in summ["runs"] if "error" not in r]
        q = ok[0]["q"] if ok else float("nan")
        e = ok[0]["e"] if ok else float("nan")
        cells = []
        for key in ("eprop_test", "tacc_test"):
            a = summ["aggregate"].get(key)
            cells.append(f"{a['mean']:.4f} +- {a['std']:.4f}" if a else "n/a")
        lines.append(f"{Path(rd).name:<24}{summ['variant']:<12}{q:>8.4g}{e:>10.4f}  {cells[0]:>18}  {cells[1]:>18}")
    return "\n".join(lines) + "\n"


def report(run_dirs, out_dir) -> list:
    """Write the table and every figure that applies; return the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run_dirs = [Path(r) for r in run_dirs]
    written = []
    (out / "table.txt").write_text(summary_table(run_dirs))
    written.append(out / "table.txt")
    labels = []
    for rd in run_dirs:
        ok = [r for r in _load_summary(rd)["runs"] if "error" not in r]
        labels.append(f"{rd.name} q={ok[0]['q']:g}" if ok else rd.name)
    for col in ("eprop_test", "eprop_train"):
        p = out / f"{col}_curves.svg"
        plot_curves(run_dirs, p, col, labels)
        written.append(p)
    for rd in run_dirs:
        summ = _load_summary(rd)
        dirs = _seed_dirs(rd, summ)
        if not dirs:
            continue
        try:
            p = out / f"{rd.name}_hyperplane.svg"
            plot_hyperplane(dirs[0], p)
            written.append(p)
        except InvalidInputError:
            pass
    return written
