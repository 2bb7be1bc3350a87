"""Synthetic datasets, label noise, splits and CSV persistence."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .errors import ConfigError, GenerationError, InvalidInputError

NOISE_KINDS = ("none", "inherent", "synthetic")


@dataclass
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    y_clean: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise InvalidInputError("X must be N x d and y must have N entries")
        if self.y.size and self.y.min() < 0:
            raise InvalidInputError("labels must be non-negative class ids")
        if self.y_clean is not None:
            self.y_clean = np.asarray(self.y_clean, dtype=np.int64)
            if self.y_clean.shape != self.y.shape:
                raise InvalidInputError("y_clean must match y in shape")

    def __len__(self):
        return self.y.size

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        yc = None if self.y_clean is None else self.y_clean[idx]
        return LabeledDataset(self.X[idx], self.y[idx], yc, dict(self.meta))


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "none"
    p_noise: float = 0.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"noise kind must be one of {NOISE_KINDS}, got {self.kind!r}")
        if not 0 <= self.p_noise < 1:
            raise ConfigError(f"noise rate must lie in [0, 1), got {self.p_noise}")
        if self.kind == "none" and self.p_noise != 0:
            raise ConfigError("noise kind 'none' requires p_noise = 0")


@dataclass(frozen=True)
class SeparabilityResult:
    separable: bool
    witness: np.ndarray | None  # (w, b) stacked; all signed margins > 0
    method: str


def _signed(y):
    y = np.asarray(y)
    labels = np.unique(y)
    if labels.size > 2:
        raise InvalidInputError("separability is defined for binary labels")
    return np.where(y == labels[-1], 1.0, -1.0)


def _verify(Xa, s, w) -> bool:
    return bool(np.all(s * (Xa @ w) > 0))


def perceptron(X, y, max_updates: int = 1_000_000):
    """Batch-cycling perceptron on the bias-augmented inputs; returns the witness or None."""
    X = np.asarray(X, dtype=np.float64)
    s = _signed(y)
    Xa = np.hstack([X, np.ones((X.shape[0], 1))])
    w = np.zeros(Xa.shape[1])
    updates = 0
    while updates < max_updates:
        bad = np.flatnonzero(s * (Xa @ w) <= 0)
        if bad.size == 0:
            return w
        i = bad[0]
        w = w + s[i] * Xa[i]
        updates += 1
    return None


def separability_check(X, y, max_updates: int = 1_000_000, return_witness: bool = False):
    """True iff a hyperplane with bias puts the two classes on strictly opposite sides.

    A linear feasibility program (max margin on bounded weights) decides the
    question.  A perceptron run with a cap of ``max_updates`` then produces a
    witness; if the margin is too thin for the cap, the LP solution is used
    instead.  Either witness is re-verified by recomputing every margin.
    """
    X = np.asarray(X, dtype=np.float64)
    s = _signed(y)
    if np.unique(s).size < 2:
        res = SeparabilityResult(True, np.concatenate([np.zeros(X.shape[1]), [s[0] if s.size else 1.0]]), "trivial")
        return res if return_witness else True
    Xa = np.hstack([X, np.ones((X.shape[0], 1))])
    dim = Xa.shape[1]
    # variables (w, t): maximize t subject to s_i <w, x_i> >= t, |w_j| <= 1
    scale = max(1.0, float(np.abs(Xa).max()))
    A = np.hstack([-(s[:, None] * Xa) / scale, np.ones((Xa.shape[0], 1))])
    lp = linprog(
        c=np.concatenate([np.zeros(dim), [-1.0]]),
        A_ub=A,
        b_ub=np.zeros(Xa.shape[0]),
        bounds=[(-1, 1)] * dim + [(None, 1)],
        method="highs",
    )
    if lp.status != 0 or -lp.fun <= 1e-12:
        res = SeparabilityResult(False, None, "lp")
        return res if return_witness else False
    w = perceptron(X, y, max_updates)
    method = "perceptron"
    if w is None or not _verify(Xa, s, w):
        w, method = lp.x[:dim], "lp"
    ok = _verify(Xa, s, w)
    res = SeparabilityResult(ok, w if ok else None, method)
    return res if return_witness else ok


def gen_gaussian_2class(
    n: int = 600,
    std: float = 1.5,
    center_range=(-10.0, 10.0),
    rng: np.random.Generator | None = None,
    n_features: int = 2,
    max_attempts: int = 1000,
    centers=None,
) -> LabeledDataset:
    """Two isotropic Gaussian clusters, redrawn until linearly separable.

    Centers are uniform on the box ``center_range`` in every coordinate unless
    given.  Classes get exactly ``n // 2`` samples each.
    """
    if n < 2 or n % 2:
        raise ConfigError(f"n must be even and >= 2, got {n}")
    if not std > 0:
        raise ConfigError("std must be > 0")
    lo, hi = map(float, center_range)
    if not lo < hi:
        raise ConfigError("center_range must be an increasing interval")
    rng = rng if rng is not None else np.random.default_rng(0)
    half = n // 2
    y = np.repeat([0, 1], half)
    for attempt in range(1, max_attempts + 1):
        c = np.asarray(centers, dtype=np.float64) if centers is not None else rng.uniform(lo, hi, size=(2, n_features))
        X = np.vstack([rng.normal(c[0], std, size=(half, n_features)), rng.normal(c[1], std, size=(half, n_features))])
        check = separability_check(X, y, return_witness=True)
        if check.separable:
            meta = {
                "generator": "gaussian_2class",
                "n": n,
                "std": std,
                "center_range": [lo, hi],
                "centers": c.tolist(),
                "attempts": attempt,
                "witness": check.witness.tolist(),
                "witness_method": check.method,
            }
            return LabeledDataset(X, y, None, meta)
    raise GenerationError(f"no separable draw within {max_attempts} attempts")


def gen_gaussian_blobs(
    n: int, n_classes: int, n_features: int = 2, std: float = 1.0, spread: float = 4.0,
    rng: np.random.Generator | None = None,
) -> LabeledDataset:
    """Multi-class blobs for MLP demos (no separability requirement)."""
    if n_classes < 2 or n < n_classes:
        raise ConfigError("need at least two classes and one sample per class")
    rng = rng if rng is not None else np.random.default_rng(0)
    centers = rng.uniform(-spread, spread, size=(n_classes, n_features))
    y = np.arange(n) % n_classes
    X = centers[y] + rng.normal(0.0, std, size=(n, n_features))
    meta = {"generator": "gaussian_blobs", "n": n, "n_classes": n_classes, "std": std, "centers": centers.tolist()}
    return LabeledDataset(X, y, None, meta)


def inject_uniform_noise(y, p: float, n_classes: int, rng: np.random.Generator):
    """With probability ``p`` per sample, replace the label by one of the other classes uniformly."""
    if n_classes < 2:
        raise ConfigError("label noise needs at least two classes")
    if not 0 <= p < 1:
        raise ConfigError(f"noise rate must lie in [0, 1), got {p}")
    y = np.asarray(y, dtype=np.int64)
    flip = rng.random(y.size) < p
    # offset in 1..C-1 never maps a label to itself
    offset = rng.integers(1, n_classes, size=y.size)
    y_noisy = np.where(flip, (y + offset) % n_classes, y)
    return y_noisy, flip


def split(dataset: LabeledDataset, fractions, rng: np.random.Generator | None = None) -> list:
    fr = np.asarray(fractions, dtype=np.float64).ravel()
    if fr.size == 0 or np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ConfigError(f"fractions must be positive and sum to 1, got {list(fractions)}")
    n = len(dataset)
    idx = np.arange(n) if rng is None else rng.permutation(n)
    cuts = np.floor(np.cumsum(fr)[:-1] * n + 1e-9).astype(np.int64)
    return [dataset.subset(part) for part in np.split(idx, cuts)]


def default_threshold(noise: NoiseSpec) -> float:
    if noise.kind == "none":
        return math.log(2.0)
    shift = math.log1p(-noise.p_noise)
    e = math.log(2.0) + shift if noise.kind == "inherent" else math.log(2.0) - shift
    if not e > 0:
        raise ConfigError(f"threshold {e} is not positive for {noise}")
    return e


def write_csv(dataset: LabeledDataset, path, meta_path=None) -> None:
    d = dataset.n_features
    header = [f"f{j}" for j in range(d)] + ["y"] + (["y_clean"] if dataset.y_clean is not None else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.X[i]] + [str(int(dataset.y[i]))]
            if dataset.y_clean is not None:
                row.append(str(int(dataset.y_clean[i])))
            w.writerow(row)
    if meta_path is not None:
        Path(meta_path).write_text(json.dumps(dataset.meta, indent=2, sort_keys=True) + "\n")


def read_csv(path, meta_path=None) -> LabeledDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidInputError(f"{path}: empty file")
    header = rows[0]
    if "y" not in header:
        raise InvalidInputError(f"{path}: missing 'y' column")
    feats = [h for h in header if h.startswith("f") and h[1:].isdigit()]
    expected = [f"f{j}" for j in range(len(feats))]
    unknown = [h for h in header if h not in expected + ["y", "y_clean"]]
    if unknown:
        raise InvalidInputError(f"{path}: unknown column(s) {unknown}")
    if header[: len(expected)] != expected:
        raise InvalidInputError(f"{path}: feature columns must be f0..f{len(expected) - 1} in order")
    body = rows[1:]
    if any(len(r) != len(header) for r in body):
        raise InvalidInputError(f"{path}: ragged rows")
    cols = {h: j for j, h in enumerate(header)}
    try:
        X = np.array([[float(r[cols[f]]) for f in expected] for r in body], dtype=np.float64).reshape(len(body), len(expected))
        y = np.array([int(r[cols["y"]]) for r in body], dtype=np.int64)
        yc = np.array([int(r[cols["y_clean"]]) for r in body], dtype=np.int64) if "y_clean" in cols else None
    except ValueError as exc:
        raise InvalidInputError(f"{path}: malformed value ({exc})") from None
    meta = json.loads(Path(meta_path).read_text()) if meta_path is not None and Path(meta_path).exists() else {}
    return LabeledDataset(X, y, yc, meta)


def io_roundtrip(dataset: LabeledDataset, path) -> LabeledDataset:
    write_csv(dataset, path)
    return read_csv(path)
