"""Phase-transition detection from the directions of parameter checkpoints.

Checkpoints are recorded during a plain (unweighted) run.  For each later
checkpoint t1 the cosine dissimilarity to every earlier checkpoint is
averaged; the checkpoint with the largest average marks the transition and
the mean training loss recorded there becomes the error threshold.

Indices follow the 1-based convention t = 1..T used in reports.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError

_HEADER = struct.Struct("<QQ")


@dataclass(frozen=True)
class CheckpointSeries:
    vectors: np.ndarray  # shape (T, dim)
    loss_history: np.ndarray | None = None  # shape (T,)

    def __post_init__(self):
        V = np.asarray(self.vectors, dtype=np.float64)
        if V.ndim != 2 or V.shape[0] < 2:
            raise InvalidInputError("need at least two checkpoints of equal dimension")
        if not np.all(np.isfinite(V)):
            raise InvalidInputError("checkpoint vectors must be finite")
        if np.any(np.linalg.norm(V, axis=1) == 0):
            raise InvalidInputError("checkpoint vectors must be nonzero")
        object.__setattr__(self, "vectors", V)
        if self.loss_history is not None:
            L = np.asarray(self.loss_history, dtype=np.float64)
            if L.shape != (V.shape[0],):
                raise InvalidInputError("loss history must have one entry per checkpoint")
            object.__setattr__(self, "loss_history", L)

    @property
    def T(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True)
class PDResult:
    d_profile: np.ndarray  # d_profile[i] is the average for t1 = i + 2
    t_star: int
    e_estimate: float | None


def cosine_dissimilarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise InvalidInputError("vectors differ in dimension")
    uu, vv = float(np.dot(u, u)), float(np.dot(v, v))
    if uu == 0 or vv == 0:
        raise InvalidInputError("cosine dissimilarity undefined for a zero vector")
    # sqrt(a * a) == a exactly, so identical vectors give exactly zero
    c = float(np.dot(u, v)) / np.sqrt(uu * vv)
    return 1.0 - min(1.0, max(-1.0, c))


def dissimilarity_grid(series: CheckpointSeries) -> np.ndarray:
    """Full T x T matrix of pairwise dissimilarities."""
    V = series.vectors
    G = V @ V.T
    G = 0.5 * (G + G.T)
    sq = np.diag(G).copy()
    return 1.0 - np.clip(G / np.sqrt(np.outer(sq, sq)), -1.0, 1.0)


def pd_profile(series: CheckpointSeries) -> np.ndarray:
    D = dissimilarity_grid(series)
    T = series.T
    # row t1 (0-based) averaged over the strictly lower triangle
    return np.array([D[t1, :t1].mean() for t1 in range(1, T)])


def detect_transition(series: CheckpointSeries) -> int:
    """1-based index of the first checkpoint attaining the largest average dissimilarity."""
    prof = pd_profile(series)
    return int(np.argmax(prof)) + 2


def threshold_from_transition(series: CheckpointSeries) -> float:
    if series.loss_history is None:
        raise InvalidInputError("checkpoint series carries no loss history")
    return float(series.loss_history[detect_transition(series) - 1])


def analyze(series: CheckpointSeries) -> PDResult:
    t = detect_transition(series)
    e = None if series.loss_history is None else float(series.loss_history[t - 1])
    return PDResult(pd_profile(series), t, e)


def write_checkpoints(path, vectors) -> None:
    """Binary layout: little-endian uint64 dimension and T, then T float64 vectors."""
    V = np.ascontiguousarray(np.asarray(vectors, dtype="<f8"))
    if V.ndim != 2:
        raise InvalidInputError("expected a 2-D array of checkpoint vectors")
    T, dim = V.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(dim, T))
        fh.write(V.tobytes())


def read_checkpoints(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise InvalidInputError(f"{path}: truncated checkpoint header")
    dim, T = _HEADER.unpack_from(raw)
    body = raw[_HEADER.size :]
    if len(body) != 8 * dim * T:
        raise InvalidInputError(f"{path}: expected {T} vectors of dimension {dim}, got {len(body)} bytes")
    return np.frombuffer(body, dtype="<f8").reshape(T, dim).astype(np.float64)


def write_loss_history(path, losses) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("mean_loss\n")
        for v in losses:
            fh.write(f"{float(v)!r}\n")


def read_loss_history(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["mean_loss"]:
        raise InvalidInputError(f"{path}: expected a single 'mean_loss' column")
    return np.array([float(r[0]) for r in rows[1:]], dtype=np.float64)


def load_series(checkpoint_path, loss_path=None) -> CheckpointSeries:
    V = read_checkpoints(checkpoint_path)
    L = None if loss_path is None else read_loss_history(loss_path)
    return CheckpointSeries(V, L)
