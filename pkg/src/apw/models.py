"""Tiny differentiable models with per-sample losses and weighted gradients.

Two models are provided: an unregularized logistic regression (bias handled
by an appended constant feature) and a one-hidden-layer softmax MLP with
rectifier units.  Parameters live in a single flat float64 vector so that
checkpoints can be compared by cosine dissimilarity directly.

Labels are integer class ids ``0..C-1`` for both models; logistic regression
maps them to ``-1/+1`` internally and also accepts signed labels directly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, logsumexp

from .errors import ConfigError, InvalidInputError
from .scheduler import validate_weights


def _as_inputs(X, dim):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != dim:
        raise InvalidInputError(f"expected inputs of shape (N, {dim}), got {X.shape}")
    return X


class LogisticModel:
    """Binary logistic regression; ``omega[-1]`` multiplies the constant feature."""

    n_classes = 2

    def __init__(self, n_features: int, omega=None):
        self.n_features = int(n_features)
        if omega is None:
            omega = np.zeros(self.n_features + 1)
        self.params = np.asarray(omega, dtype=np.float64).copy()
        if self.params.shape != (self.n_features + 1,):
            raise InvalidInputError("omega must have n_features + 1 entries")

    @property
    def omega(self):
        return self.params

    def copy(self):
        return LogisticModel(self.n_features, self.params)

    def bias_mask(self) -> np.ndarray:
        mask = np.zeros(self.params.size, dtype=bool)
        mask[-1] = True
        return mask

    def _signed(self, y):
        # class ids {0, 1} and signed labels {-1, +1} are both accepted
        y = np.asarray(y)
        if np.all((y == -1) | (y == 1)):
            return y.astype(np.float64)
        if np.all((y == 0) | (y == 1)):
            return 2.0 * y - 1.0
        raise InvalidInputError("logistic regression expects labels in {0, 1} or {-1, +1}")

    def scores(self, X, params=None):
        p = self.params if params is None else params
        X = _as_inputs(X, self.n_features)
        return X @ p[:-1] + p[-1]

    def margins(self, X, y, params=None):
        return self._signed(y) * self.scores(X, params)

    def losses(self, X, y, params=None):
        return np.logaddexp(0.0, -self.margins(X, y, params))

    def grad(self, X, y, weights, params=None):
        s = self._signed(y)
        m = s * self.scores(X, params)
        # d/dm log(1 + e^-m) = -sigmoid(-m)
        coef = np.asarray(weights) * (-s) * _sigmoid(-m)
        X = np.asarray(X, dtype=np.float64)
        return np.concatenate([X.T @ coef, [coef.sum()]])

    def predict(self, X, params=None):
        return (self.scores(X, params) >= 0).astype(np.int64)


def _sigmoid(t):
    return np.exp(-np.logaddexp(0.0, -t))


class SoftmaxMLP:
    """Fully connected network with rectifier hidden layers and a softmax output."""

    def __init__(self, layer_dims, params=None, rng: np.random.Generator | None = None):
        dims = [int(d) for d in layer_dims]
        if len(dims) < 2 or min(dims) < 1:
            raise ConfigError(f"invalid layer dims {layer_dims}")
        self.layer_dims = dims
        self.n_features = dims[0]
        self.n_classes = dims[-1]
        self._shapes = [(a, b) for a, b in zip(dims[:-1], dims[1:])]
        size = sum(a * b + b for a, b in self._shapes)
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            chunks = []
            for a, b in self._shapes:
                chunks.append(rng.normal(0.0, math.sqrt(2.0 / a), size=a * b))
                chunks.append(np.zeros(b))
            params = np.concatenate(chunks)
        self.params = np.asarray(params, dtype=np.float64).copy()
        if self.params.shape != (size,):
            raise InvalidInputError(f"expected {size} parameters, got {self.params.shape}")

    def copy(self):
        return SoftmaxMLP(self.layer_dims, self.params)

    def bias_mask(self) -> np.ndarray:
        """True at every bias entry of the flat parameter vector."""
        mask, pos = np.zeros(self.params.size, dtype=bool), 0
        for a, b in self._shapes:
            pos += a * b
            mask[pos : pos + b] = True
            pos += b
        return mask

    def _unpack(self, params):
        out, pos = [], 0
        for a, b in self._shapes:
            W = params[pos : pos + a * b].reshape(a, b)
            pos += a * b
            out.append((W, params[pos : pos + b]))
            pos += b
        return out

    def _forward(self, X, params):
        layers = self._unpack(self.params if params is None else params)
        acts = [_as_inputs(X, self.n_features)]
        pre = []
        for i, (W, b) in enumerate(layers):
            z = acts[-1] @ W + b
            pre.append(z)
            acts.append(z if i == len(layers) - 1 else np.maximum(z, 0.0))
        return layers, acts, pre

    def _labels(self, y):
        y = np.asarray(y)
        if y.ndim != 1 or np.any(y < 0) or np.any(y >= self.n_classes):
            raise InvalidInputError(f"labels must lie in [0, {self.n_classes})")
        return y.astype(np.int64)

    def log_probs(self, X, params=None):
        _, acts, _ = self._forward(X, params)
        return log_softmax(acts[-1], axis=1)

    def probs(self, X, params=None):
        return np.exp(self.log_probs(X, params))

    def losses(self, X, y, params=None):
        y = self._labels(y)
        logits = self._forward(X, params)[1][-1]
        return logsumexp(logits, axis=1) - logits[np.arange(y.size), y]

    def grad(self, X, y, weights, params=None):
        y = self._labels(y)
        layers, acts, pre = self._forward(X, params)
        delta = np.exp(log_softmax(acts[-1], axis=1))
        delta[np.arange(y.size), y] -= 1.0
        delta *= np.asarray(weights)[:, None]
        grads = []
        for i in range(len(layers) - 1, -1, -1):
            W, _ = layers[i]
            grads.append((acts[i].T @ delta, delta.sum(axis=0)))
            if i > 0:
                delta = (delta @ W.T) * (pre[i - 1] > 0)
        flat = []
        for gW, gb in reversed(grads):
            flat.extend([gW.ravel(), gb])
        return np.concatenate(flat)

    def predict(self, X, params=None):
        return np.argmax(self._forward(X, params)[1][-1], axis=1)


def per_sample_losses(model, X, y, params=None) -> np.ndarray:
    y = np.asarray(y)
    if np.asarray(X).shape[0] != y.shape[0]:
        raise InvalidInputError("inputs and labels differ in length")
    return model.losses(X, y, params)


def weighted_gradient(model, X, y, weights, params=None) -> np.ndarray:
    """Gradient of sum_n w_n L_n with respect to the flat parameter vector."""
    w = validate_weights(weights, tol=1e-9)
    if w.shape[0] != np.asarray(y).shape[0] or np.asarray(X).shape[0] != w.shape[0]:
        raise InvalidInputError("weights, inputs and labels must have equal length")
    return model.grad(X, y, w, params)


def numeric_gradient(model, X, y, weights, h: float = 1e-6, params=None) -> np.ndarray:
    """Central differences of the weighted loss, one coordinate at a time."""
    p0 = (model.params if params is None else params).astype(np.float64)
    w = np.asarray(weights, dtype=np.float64)
    out = np.empty_like(p0)
    for i in range(p0.size):
        p = p0.copy()
        p[i] = p0[i] + h
        fp = np.dot(w, model.losses(X, y, p))
        p[i] = p0[i] - h
        fm = np.dot(w, model.losses(X, y, p))
        out[i] = (fp - fm) / (2 * h)
    return out


def gradient_check(model, X, y, weights=None, h: float = 1e-6) -> float:
    """Largest componentwise relative error between analytic and central-difference gradients."""
    n = np.asarray(y).shape[0]
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=np.float64)
    a = weighted_gradient(model, X, y, w)
    f = numeric_gradient(model, X, y, w, h)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-7)
    return float(np.max(np.abs(a - f) / denom))


def confidence_band(e: float) -> float:
    """Margin M_e = -ln(exp(e) - 1) above which a logistic loss is at most ``e``.

    For e >= ln 2 the band is empty and M_e <= 0; a warning is emitted.
    """
    if not e > 0:
        raise InvalidInputError(f"threshold must be > 0, got {e}")
    m = -math.log(math.expm1(e))
    if m <= 0:
        warnings.warn(f"e={e} >= ln 2: confidence band is empty (M_e={m:.6g})", stacklevel=2)
    return m


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "lbfgs"
    step: float = 0.01
    grad_tol: float = 1e-5
    max_iter: int = 150
    lbfgs_history: int = 10
    epochs: int = 30
    batch_size: int = 32

    def __post_init__(self):
        if self.kind not in ("lbfgs", "sgd"):
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        if not self.step > 0:
            raise ConfigError("step must be > 0")
        if self.max_iter < 1 or self.epochs < 1:
            raise ConfigError("iteration counts must be >= 1")
        if self.lbfgs_history < 1:
            raise ConfigError("lbfgs_history must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    @property
    def n_epochs(self) -> int:
        """One full-batch iteration counts as one epoch for L-BFGS."""
        return self.max_iter if self.kind == "lbfgs" else self.epochs


class LBFGS:
    """Limited-memory BFGS with a fixed step length and no line search.

    Curvature pairs come from successive gradients of whatever objective the
    caller evaluated, so a reweighted objective that drifts between iterations
    is handled like a noisy one.  Pairs with s.y <= 1e-10 are skipped.  The
    first step is scaled by min(1, 1/||g||_1) before the fixed step applies.
    """

    def __init__(self, step: float = 0.01, history: int = 10, grad_tol: float = 1e-5):
        self.step = step
        self.history = history
        self.grad_tol = grad_tol
        self.s_hist: list[np.ndarray] = []
        self.y_hist: list[np.ndarray] = []
        self.h_diag = 1.0
        self._prev_g = None
        self._prev_s = None

    def converged(self, g) -> bool:
        return float(np.max(np.abs(g))) <= self.grad_tol

    def _two_loop(self, g):
        q = g.copy()
        rhos = [1.0 / float(y @ s) for s, y in zip(self.s_hist, self.y_hist)]
        a = [0.0] * len(rhos)
        for i in range(len(rhos) - 1, -1, -1):
            a[i] = rhos[i] * float(self.s_hist[i] @ q)
            q -= a[i] * self.y_hist[i]
        r = q * self.h_diag
        for i in range(len(rhos)):
            b = rhos[i] * float(self.y_hist[i] @ r)
            r += self.s_hist[i] * (a[i] - b)
        return r

    def step_from(self, params, g):
        g = np.asarray(g, dtype=np.float64)
        if self._prev_g is None:
            d = -g
            t = min(1.0, 1.0 / max(float(np.abs(g).sum()), 1e-300)) * self.step
        else:
            y = g - self._prev_g
            s = self._prev_s
            ys = float(y @ s)
            if ys > 1e-10:
                if len(self.s_hist) == self.history:
                    self.s_hist.pop(0)
                    self.y_hist.pop(0)
                self.s_hist.append(s)
                self.y_hist.append(y)
                self.h_diag = ys / float(y @ y)
            d = -self._two_loop(g)
            t = self.step
        self._prev_g = g
        self._prev_s = t * d
        return params + t * d


class SGD:
    def __init__(self, step: float):
        self.step = step

    def converged(self, g) -> bool:
        return False

    def step_from(self, params, g):
        return params - self.step * np.asarray(g)


def make_optimizer(cfg: OptimizerConfig):
    if cfg.kind == "lbfgs":
        return LBFGS(cfg.step, cfg.lbfgs_history, cfg.grad_tol)
    return SGD(cfg.step)
