"""Curriculum sampling (S-APW) and weight-driven mixup (M-APW)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidInputError, NumericError
from .weighting import WeightingMode

AFTER_SAMPLING_CHOICES = ("A", "E", "I", "EI")


@dataclass
class SamplerState:
    """Indices included so far in the growing training subset."""

    n: int
    r_s: float = 0.05
    included: np.ndarray = field(default=None)  # boolean mask over [0, n)
    rounds: int = 0
    done: bool = False

    def __post_init__(self):
        if not 0 < self.r_s <= 1:
            raise ConfigError(f"sampling fraction must lie in (0, 1], got {self.r_s}")
        if self.n <= 0:
            raise ConfigError("sampler needs a non-empty training set")
        if self.included is None:
            self.included = np.zeros(self.n, dtype=bool)
        if self.draw_size == 0:
            raise ConfigError(f"floor(r_s * N) is zero for r_s={self.r_s}, N={self.n}")

    @property
    def draw_size(self) -> int:
        return int(math.floor(self.r_s * self.n))

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.included)


def sapw_round(weights, state: SamplerState, rng: np.random.Generator) -> SamplerState:
    """Grow the subset by floor(r_s * N) weight-proportional draws from the remainder.

    Draws are without replacement and restricted to samples not yet included,
    with the weights renormalized over that remainder.
    """
    if state.done:
        raise InvalidInputError("sampling already finished")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (state.n,):
        raise InvalidInputError("weight vector does not match the sampler size")
    remainder = np.flatnonzero(~state.included)
    m = state.draw_size
    if remainder.size < m:
        raise InvalidInputError("remainder smaller than one draw")
    p = w[remainder]
    total = p.sum()
    if not (np.isfinite(total) and total > 0):
        raise NumericError("remaining weight mass is zero")
    chosen = rng.choice(remainder, size=m, replace=False, p=p / total)
    included = state.included.copy()
    included[chosen] = True
    left = state.n - int(included.sum())
    return SamplerState(
        n=state.n, r_s=state.r_s, included=included, rounds=state.rounds + 1, done=left < m
    )


def sapw_mode_after_completion(choice):
    """Training mode once every sample is in: ``"A"`` (plain average) or a WeightingMode."""
    tag = str(getattr(choice, "value", choice)).upper()
    if tag not in AFTER_SAMPLING_CHOICES:
        raise ConfigError(f"invalid post-sampling mode {choice!r}; expected one of {AFTER_SAMPLING_CHOICES}")
    return "A" if tag == "A" else WeightingMode(tag)


@dataclass(frozen=True)
class MixPair:
    i: int
    j: int
    lambda_i: float
    lambda_j: float


def mapw_coefficients(w_i: float, w_j: float, i: int = 0, j: int = 1) -> MixPair:
    if not (w_i > 0 and w_j > 0) or not (math.isfinite(w_i) and math.isfinite(w_j)):
        raise InvalidInputError(f"mixup weights must be positive, got {w_i}, {w_j}")
    lam = w_i / (w_i + w_j)
    return MixPair(i, j, lam, 1.0 - lam)


def cross_entropy(target, pred) -> float:
    """CE of a (possibly soft) target distribution against predicted probabilities."""
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    mask = t > 0
    return float(-np.sum(t[mask] * np.log(p[mask])))


def mixup_loss(pred, y_i, y_j, pair: MixPair) -> float:
    p = np.asarray(pred, dtype=np.float64)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise InvalidInputError("prediction must be a probability vector")
    return pair.lambda_i * cross_entropy(y_i, p) + pair.lambda_j * cross_entropy(y_j, p)


def standard_mixup_lambda(alpha_mix: float, rng: np.random.Generator, size=None):
    if not alpha_mix > 0:
        raise InvalidInputError(f"alpha_mix must be > 0, got {alpha_mix}")
    return rng.beta(alpha_mix, alpha_mix, size=size)


def pair_permutation(batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Partner positions for mixup: a seeded permutation of the batch."""
    return rng.permutation(batch_size)


def mix_batch(X, batch_weights, perm, lam=None):
    """Mix inputs of a batch with their partners.

    With ``lam`` None the coefficients come from the APW weights of each pair;
    otherwise ``lam`` (scalar or per-row array) is the standard mixup draw.
    Returns ``(X_mixed, lambda_i, lambda_j)``.
    """
    X = np.asarray(X, dtype=np.float64)
    if lam is None:
        w = np.asarray(batch_weights, dtype=np.float64)
        lam_i = w / (w + w[perm])
    else:
        lam_i = np.broadcast_to(np.asarray(lam, dtype=np.float64), (X.shape[0],)).copy()
    lam_j = 1.0 - lam_i
    Xm = lam_i[:, None] * X + lam_j[:, None] * X[perm]
    return Xm, lam_i, lam_j
