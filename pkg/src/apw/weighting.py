"""Epoch-level (E), iteration-level (I) and combined (EI) weighting procedures.

Every epoch starts with a full-set loss evaluation that fixes ``alpha``.
E and EI apply the global update right away; I keeps the previous vector and
updates weights batch by batch.  I and EI rebuild the global vector at the
end of the epoch from the per-batch contributions scaled by ``N_b / N``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import CoverageError, InvalidInputError
from .scheduler import (
    EpochUpdate,
    SchedulerConfig,
    epoch_step,
    hard_mass,
    mark_difficulty,
    validate_losses,
    validate_weights,
    weight_change,
)


class WeightingMode(str, enum.Enum):
    E = "E"
    I = "I"  # noqa: E741
    EI = "EI"

    @classmethod
    def parse(cls, tag) -> "WeightingMode":
        if isinstance(tag, cls):
            return tag
        try:
            return cls(str(tag).upper())
        except ValueError:
            raise InvalidInputError(f"unknown weighting mode {tag!r}") from None


@dataclass(frozen=True)
class EpochPlan:
    alpha: float
    base_weights: np.ndarray
    epoch_update: EpochUpdate
    mode: WeightingMode
    n: int
    beta: np.ndarray  # full-set difficulty at epoch start


@dataclass(frozen=True)
class MiniBatch:
    indices: np.ndarray
    losses: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size == 0:
            raise InvalidInputError("empty batch")
        if np.unique(idx).size != idx.size:
            raise InvalidInputError("batch indices must be distinct")
        L = validate_losses(self.losses)
        if L.shape != idx.shape:
            raise InvalidInputError("batch losses and indices differ in length")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "losses", L)


def prepare_epoch(full_losses, prev_weights, config: SchedulerConfig, mode) -> EpochPlan:
    mode = WeightingMode.parse(mode)
    w_prev = validate_weights(prev_weights)
    if mode is WeightingMode.I:
        beta = mark_difficulty(full_losses, config.e)
        if beta.shape != w_prev.shape:
            raise InvalidInputError("loss vector does not cover the training set")
        upd = weight_change(hard_mass(w_prev, beta), config)
        # Z of the would-be global update, kept for diagnostics only
        z = float(np.dot(w_prev, np.exp(-upd.alpha * beta)))
        upd = EpochUpdate(upd.rho_raw, upd.rho_clipped, upd.gamma, upd.alpha, z, upd.clipped)
        base = w_prev
    else:
        base, upd, beta = epoch_step(w_prev, full_losses, config)
    return EpochPlan(upd.alpha, base, upd, mode, w_prev.size, beta)


def batch_step_weights(plan: EpochPlan, batch: MiniBatch, e: float) -> tuple[np.ndarray, np.ndarray]:
    """Weights used for one mini-batch loss, and the batch's share of the global vector.

    Returns ``(batch_weights, global_contrib)``; both are aligned with
    ``batch.indices``.
    """
    idx = batch.indices
    if idx.min() < 0 or idx.max() >= plan.n:
        raise InvalidInputError("batch index out of range")
    base = plan.base_weights[idx]
    if plan.mode is WeightingMode.E:
        bw = base / base.sum()
        return bw, base.copy()
    beta = mark_difficulty(batch.losses, e)
    unnorm = base.astype(np.longdouble) * np.exp(-np.longdouble(plan.alpha) * beta)
    bw_ext = unnorm / unnorm.sum()
    contrib = bw_ext * (np.longdouble(idx.size) / plan.n)
    return bw_ext.astype(np.float64), contrib


def finalize_epoch(plan: EpochPlan, contribs) -> np.ndarray:
    """Assemble the epoch's global weight vector.

    ``contribs`` is an iterable of ``(indices, global_contrib)`` pairs, one per
    batch.  E mode ignores it.
    """
    if plan.mode is WeightingMode.E:
        return plan.base_weights
    acc = np.zeros(plan.n, dtype=np.longdouble)
    seen = np.zeros(plan.n, dtype=np.int64)
    for idx, vals in contribs:
        idx = np.asarray(idx, dtype=np.int64)
        acc[idx] = np.asarray(vals, dtype=np.longdouble)
        seen[idx] += 1
    if np.any(seen == 0):
        missing = np.flatnonzero(seen == 0)
        raise CoverageError(f"{missing.size} indices never visited this epoch (first: {missing[0]})")
    if np.any(seen > 1):
        raise CoverageError("some indices were visited more than once this epoch")
    out = (acc / acc.sum()).astype(np.float64)
    return out / out.sum()


def partition(n: int, batch_size: int, rng: np.random.Generator | None = None, indices=None) -> list[np.ndarray]:
    """Shuffle once and cut into disjoint batches covering every index."""
    idx = np.arange(n) if indices is None else np.asarray(indices, dtype=np.int64)
    if rng is not None:
        idx = rng.permutation(idx)
    if batch_size <= 0 or batch_size >= idx.size:
        return [idx]
    return [idx[i : i + batch_size] for i in range(0, idx.size, batch_size)]
