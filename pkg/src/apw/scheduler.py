"""Difficulty measurer and training scheduler.

Per-sample losses are split into easy (+1) and hard (-1) samples by an error
threshold ``e``.  The weight carried by the hard samples decides the sign and
size of a boosting-style log-odds step ``alpha`` which multiplies every sample
weight by ``exp(-alpha * beta)`` before renormalizing.

All functions here are pure and operate on 1-D numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidInputError, NumericError

DEFAULT_RHO_CLIP = (1e-4, 1.0 - 1e-4)
WEIGHT_SUM_TOL = 1e-12


@dataclass(frozen=True)
class SchedulerConfig:
    """Hyperparameters of the weight scheduler.

    ``e`` is the error threshold in nats, ``q`` the stabilizer dividing the
    log-odds step, ``tau`` the phase threshold (1/2 recovers the plain rule)
    and ``rho_clip`` the interval the hard mass is clipped to.
    """

    e: float
    q: float
    tau: float = 0.5
    rho_clip: tuple[float, float] = DEFAULT_RHO_CLIP

    def __post_init__(self):
        lo, hi = self.rho_clip
        if not (math.isfinite(self.e) and self.e > 0):
            raise ConfigError(f"error threshold e must be > 0, got {self.e}")
        if not (math.isfinite(self.q) and self.q >= 2):
            raise ConfigError(f"stabilizer q must be >= 2, got {self.q}")
        if not 0 < self.tau < 1:
            raise ConfigError(f"phase threshold tau must lie in (0, 1), got {self.tau}")
        if not 0 < lo < hi < 1:
            raise ConfigError(f"rho_clip must satisfy 0 < lo < hi < 1, got {self.rho_clip}")
        object.__setattr__(self, "rho_clip", (float(lo), float(hi)))

    @property
    def alpha_cap(self) -> float:
        """Largest |alpha| reachable at tau = 1/2 once rho is clipped."""
        lo, hi = self.rho_clip
        return max(math.log((1 - lo) / lo), math.log(hi / (1 - hi))) / self.q


@dataclass(frozen=True)
class EpochUpdate:
    """Scheduler state produced by one weighting step."""

    rho_raw: float
    rho_clipped: float
    gamma: float
    alpha: float
    z: float = 1.0
    clipped: bool = False


def uniform_weights(n: int) -> np.ndarray:
    if n <= 0:
        raise InvalidInputError("need at least one sample")
    return np.full(n, 1.0 / n)


def validate_weights(weights, tol: float = WEIGHT_SUM_TOL) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise InvalidInputError("weights must be a non-empty 1-D array")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise InvalidInputError("weights must be finite and strictly positive")
    if abs(w.sum() - 1.0) > tol:
        raise InvalidInputError(f"weights must sum to 1 (got {w.sum()!r})")
    return w


def validate_losses(losses) -> np.ndarray:
    L = np.asarray(losses, dtype=np.float64)
    if L.ndim != 1:
        raise InvalidInputError("losses must be a 1-D array")
    if not np.all(np.isfinite(L)):
        raise InvalidInputError("losses must be finite")
    if np.any(L < 0):
        raise InvalidInputError("losses must be nonnegative")
    return L


def _check_beta(beta) -> np.ndarray:
    b = np.asarray(beta)
    if b.ndim != 1 or not np.all((b == 1) | (b == -1)):
        raise InvalidInputError("difficulty vector entries must be +1 or -1")
    return b.astype(np.int8)


def mark_difficulty(losses, e: float) -> np.ndarray:
    """Return +1 for samples with loss <= e (easy) and -1 otherwise (hard)."""
    if not (math.isfinite(e) and e > 0):
        raise InvalidInputError(f"error threshold must be > 0, got {e}")
    L = validate_losses(losses)
    return np.where(L <= e, 1, -1).astype(np.int8)


def hard_mass(weights, beta) -> float:
    """Total weight carried by the hard samples."""
    w = np.asarray(weights, dtype=np.float64)
    b = _check_beta(beta)
    if w.shape != b.shape:
        raise InvalidInputError(f"length mismatch: {w.shape} vs {b.shape}")
    return float(np.clip(w[b < 0].sum(), 0.0, 1.0))


def weight_change(rho: float, config: SchedulerConfig) -> EpochUpdate:
    """Clip ``rho`` and compute the log-odds step.

    alpha = (ln((1 - rho)/rho) + ln(tau/(1 - tau))) / q

    The tau term vanishes exactly at tau = 1/2.  ``z`` is left at 1; it is
    filled in once the update is actually applied.
    """
    if not (0.0 <= rho <= 1.0):
        raise InvalidInputError(f"rho must lie in [0, 1], got {rho}")
    lo, hi = config.rho_clip
    rc = min(max(rho, lo), hi)
    log_odds = math.log((1.0 - rc) / rc)
    if config.tau != 0.5:
        log_odds += math.log(config.tau / (1.0 - config.tau))
    return EpochUpdate(
        rho_raw=float(rho),
        rho_clipped=rc,
        gamma=0.5 - rc,
        alpha=log_odds / config.q,
        clipped=not (lo <= rho <= hi),
    )


def update_weights(weights, beta, alpha: float) -> tuple[np.ndarray, float]:
    """Multiply each weight by exp(-alpha * beta) and renormalize.

    Returns the new weight vector and the normalizer Z.
    """
    w = validate_weights(weights)
    b = _check_beta(beta)
    if w.shape != b.shape:
        raise InvalidInputError(f"length mismatch: {w.shape} vs {b.shape}")
    if not math.isfinite(alpha):
        raise NumericError(f"alpha is not finite: {alpha}")
    # only two distinct multipliers, so evaluate exp once per sign
    unnorm = w * np.where(b > 0, math.exp(-alpha), math.exp(alpha))
    z = float(unnorm.sum())
    if not math.isfinite(z) or z <= 0:
        raise NumericError(f"normalizer Z is degenerate: {z}")
    new = unnorm / z
    if np.any(new <= 0):
        raise NumericError("weight underflow: some weights reached zero")
    return new, z


def reweighted_loss(weights, losses) -> float:
    w = np.asarray(weights, dtype=np.float64)
    L = validate_losses(losses)
    if w.shape != L.shape:
        raise InvalidInputError(f"length mismatch: {w.shape} vs {L.shape}")
    return float(np.dot(w, L))


def epoch_step(weights, losses, config: SchedulerConfig) -> tuple[np.ndarray, EpochUpdate, np.ndarray]:
    """Run measurer and scheduler once over the full training set.

    Returns ``(new_weights, update, beta)``.  ``beta`` is handed back because
    the theory monitors need it and recomputing it is wasteful.
    """
    w = validate_weights(weights)
    beta = mark_difficulty(losses, config.e)
    if beta.shape != w.shape:
        raise InvalidInputError(f"length mismatch: {w.shape} vs {beta.shape}")
    upd = weight_change(hard_mass(w, beta), config)
    new, z = update_weights(w, beta, upd.alpha)
    return new, EpochUpdate(upd.rho_raw, upd.rho_clipped, upd.gamma, upd.alpha, z, upd.clipped), beta


def closed_form_z(rho: float, alpha: float) -> float:
    """Normalizer implied by the hard mass: (1 - rho) e^-alpha + rho e^alpha."""
    return (1.0 - rho) * math.exp(-alpha) + rho * math.exp(alpha)
