"""Epoch loop shared by every weighting variant.

Each epoch evaluates the full training set at the current parameters, lets
the scheduler fix this epoch's step and weights, walks the mini-batches (one
full batch for L-BFGS), and finally folds batch contributions back into the
global weight vector.  Diagnostics for the bound checkers are collected along
the way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, InvalidInputError
from .models import OptimizerConfig, make_optimizer
from .scheduler import (
    EpochUpdate,
    SchedulerConfig,
    hard_mass,
    mark_difficulty,
    reweighted_loss,
    uniform_weights,
    weight_change,
)
from .theory import BoundReport, TheoryTrace, eprop, tacc, theorem1_check
from .variants import SamplerState, mix_batch, pair_permutation, sapw_mode_after_completion, sapw_round, standard_mixup_lambda
from .weighting import MiniBatch, WeightingMode, batch_step_weights, finalize_epoch, partition, prepare_epoch

EPOCH_COLUMNS = (
    "epoch", "rho_raw", "rho_clipped", "gamma", "alpha", "Z", "A_K", "L_apw", "L_mean",
    "eprop_train", "eprop_test", "tacc_train", "tacc_test", "clipped_flag",
    "w_min", "w_max", "hard_mass", "subset_size",
)

FAMILIES = ("vanilla", "mixup", "APW", "S-APW", "M-APW")


@dataclass(frozen=True)
class Variant:
    family: str
    mode: WeightingMode | None = None
    after: object = None  # S-APW only: "A" or a WeightingMode

    @classmethod
    def parse(cls, name) -> "Variant":
        if isinstance(name, cls):
            return name
        tag = str(name).strip()
        low = tag.lower()
        if low in ("vanilla", "mixup"):
            return cls(low)
        for fam in ("S-APW", "M-APW", "APW"):
            if tag.upper().startswith(fam + "-"):
                suffix = tag[len(fam) + 1 :]
                try:
                    if fam == "S-APW":
                        return cls(fam, WeightingMode.E, sapw_mode_after_completion(suffix))
                    return cls(fam, WeightingMode.parse(suffix))
                except InvalidInputError:
                    raise ConfigError(f"unknown variant {name!r}") from None
        raise ConfigError(f"unknown variant {name!r}")

    @property
    def name(self) -> str:
        if self.family in ("vanilla", "mixup"):
            return self.family
        suffix = self.after if self.family == "S-APW" else self.mode
        return f"{self.family}-{getattr(suffix, 'value', suffix)}"

    @property
    def reweights(self) -> bool:
        return self.family not in ("vanilla", "mixup")

    @property
    def exact_chain(self) -> bool:
        """True when every recorded update is a full-set multiplicative step."""
        if self.family == "S-APW":
            return self.after in ("A", WeightingMode.E)
        return self.mode is WeightingMode.E


@dataclass
class RunResult:
    model: object
    variant: Variant
    records: list = field(default_factory=list)
    trace: TheoryTrace = None
    theorem1: BoundReport = field(default_factory=BoundReport)
    checkpoints: list = field(default_factory=list)
    checkpoint_losses: list = field(default_factory=list)
    weights: np.ndarray = None
    converged_epoch: int | None = None
    sampling_rounds: int | None = None

    @property
    def checkpoint_array(self) -> np.ndarray:
        return np.vstack(self.checkpoints) if self.checkpoints else np.zeros((0, self.model.params.size))


def _finite_losses(L, epoch, where):
    if not np.all(np.isfinite(L)):
        bad = int(np.flatnonzero(~np.isfinite(L))[0])
        raise DivergenceError(f"non-finite loss at epoch {epoch} ({where}), first sample {bad}")
    return L


def _diagnostic_update(weights, beta, config) -> EpochUpdate:
    """Scheduler quantities for an epoch whose weights are not applied."""
    upd = weight_change(hard_mass(weights, beta), config)
    z = float(np.dot(weights, np.exp(-upd.alpha * beta)))
    return EpochUpdate(upd.rho_raw, upd.rho_clipped, upd.gamma, upd.alpha, z, upd.clipped)


def _batch_gradient(model, Xb, yb, bw, variant, rng_mix, mix_alpha):
    if variant.family not in ("mixup", "M-APW"):
        return model.grad(Xb, yb, bw)
    perm = pair_permutation(yb.size, rng_mix)
    if variant.family == "mixup":
        Xm, li, lj = mix_batch(Xb, None, perm, standard_mixup_lambda(mix_alpha, rng_mix))
    else:
        Xm, li, lj = mix_batch(Xb, bw, perm)
    m = yb.size
    # mixed-target CE is linear in the target, so stack both label halves
    return model.grad(np.vstack([Xm, Xm]), np.concatenate([yb, yb[perm]]), np.concatenate([li, lj]) / m)


def train(
    model,
    X,
    y,
    optimizer: OptimizerConfig,
    variant="vanilla",
    scheduler: SchedulerConfig | None = None,
    *,
    eval_sets: dict | None = None,
    eval_threshold: float = math.log(2.0),
    rng_shuffle: np.random.Generator | None = None,
    rng_mix: np.random.Generator | None = None,
    sapw_fraction: float = 0.05,
    mix_alpha: float = 1.0,
    checkpoint_stride: int = 1,
) -> RunResult:
    """Train a copy of ``model`` and return it together with the run diagnostics.

    ``eval_sets`` maps a name (``"test"`` is reported in the epoch table) to an
    ``(X, y)`` pair.  ``scheduler`` is required for reweighting variants; for
    vanilla and mixup it only feeds the diagnostic columns.
    """
    v = Variant.parse(variant)
    if v.reweights and scheduler is None:
        raise ConfigError(f"variant {v.name} needs a scheduler configuration")
    if checkpoint_stride < 1:
        raise ConfigError("checkpoint_stride must be >= 1")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    n = y.size
    rng_shuffle = rng_shuffle if rng_shuffle is not None else np.random.default_rng(0)
    rng_mix = rng_mix if rng_mix is not None else np.random.default_rng(1)
    eval_sets = eval_sets or {}
    test = eval_sets.get("test")

    model = model.copy()
    opt = make_optimizer(optimizer)
    tau = scheduler.tau if scheduler is not None else 0.5
    result = RunResult(model, v, trace=TheoryTrace(n, exact_chain=v.exact_chain, tau=tau))
    sampler = SamplerState(n, sapw_fraction) if v.family == "S-APW" else None
    w = uniform_weights(n)
    pending = None  # last exact-chain epoch awaiting the next-epoch hard-mass comparison

    for k in range(1, optimizer.n_epochs + 1):
        L = _finite_losses(model.losses(X, y), k, "epoch start")
        sampling = sampler is not None and not sampler.done
        if sampler is not None and sampler.done:
            mode = sapw_mode_after_completion(v.after)
        else:
            mode = v.mode
        applied = v.reweights and mode != "A"

        plan = None
        beta = None
        upd = None
        if applied:
            plan = prepare_epoch(L, w, scheduler, WeightingMode.E if sampling else mode)
            base, beta, upd = plan.base_weights, plan.beta, plan.epoch_update
        elif scheduler is not None:
            base = uniform_weights(n)
            beta = mark_difficulty(L, scheduler.e)
            upd = _diagnostic_update(base, beta, scheduler)
        else:
            base = uniform_weights(n)

        if sampling:
            sampler = sapw_round(base, sampler, rng_shuffle)
            active = sampler.indices
            result.sampling_rounds = sampler.rounds
        else:
            active = np.arange(n)

        if optimizer.kind == "lbfgs":
            batches = [active]
        else:
            batches = partition(n, optimizer.batch_size, rng_shuffle, indices=active)

        contribs = []
        stop = False
        for idx in batches:
            Xb, yb = X[idx], y[idx]
            if plan is None or sampling:
                bw = np.full(idx.size, 1.0 / idx.size)
            else:
                bl = L[idx] if optimizer.kind == "lbfgs" else _finite_losses(model.losses(Xb, yb), k, "batch")
                bw, contrib = batch_step_weights(plan, MiniBatch(idx, bl), scheduler.e)
                contribs.append((idx, contrib))
            g = _batch_gradient(model, Xb, yb, bw, v, rng_mix, mix_alpha)
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient at epoch {k}")
            if opt.converged(g):
                stop = True
                break
            model.params = opt.step_from(model.params, g)
        if stop:
            result.converged_epoch = k
            break

        if plan is not None:
            w = base if sampling else finalize_epoch(plan, contribs)
            result.trace.record(upd, beta)
        l_apw = reweighted_loss(base, L)

        if scheduler is not None:
            exact = plan is not None and (sampling or mode is WeightingMode.E)
            if pending is not None:
                pw, pb, pl, pk = pending
                # rho of this epoch is measured against the previous epoch's weights only on exact chains
                nb, nr = (beta, upd.rho_raw) if exact else (None, None)
                result.theorem1.extend(theorem1_check(pw, pb, pl, scheduler.e, nb, nr, epoch=pk))
            if exact:
                pending = (base, beta, l_apw, k)
            else:
                pending = None
                result.theorem1.extend(theorem1_check(base, beta, l_apw, scheduler.e, epoch=k))

        L_end = _finite_losses(model.losses(X, y), k, "epoch end")
        if not np.all(np.isfinite(model.params)):
            raise DivergenceError(f"non-finite parameters at epoch {k}")
        rec = {
            "epoch": k,
            "rho_raw": upd.rho_raw if upd else math.nan,
            "rho_clipped": upd.rho_clipped if upd else math.nan,
            "gamma": upd.gamma if upd else math.nan,
            "alpha": upd.alpha if upd else math.nan,
            "Z": upd.z if upd else math.nan,
            "A_K": result.trace.A,
            "L_apw": l_apw,
            "L_mean": float(np.mean(L)),
            "eprop_train": eprop(L_end, eval_threshold),
            "eprop_test": math.nan,
            "tacc_train": tacc(model.predict(X), y),
            "tacc_test": math.nan,
            "clipped_flag": int(bool(upd.clipped)) if upd else 0,
            "w_min": float(w.min()),
            "w_max": float(w.max()),
            "hard_mass": float(base[beta < 0].sum()) if beta is not None else math.nan,
            "subset_size": int(active.size),
        }
        if test is not None:
            Xt, yt = test
            rec["eprop_test"] = eprop(_finite_losses(model.losses(Xt, yt), k, "test"), eval_threshold)
            rec["tacc_test"] = tacc(model.predict(Xt), yt)
        result.records.append(rec)
        if k % checkpoint_stride == 0:
            result.checkpoints.append(model.params.copy())
            result.checkpoint_losses.append(float(np.mean(L_end)))

    if pending is not None:
        pw, pb, pl, pk = pending
        result.theorem1.extend(theorem1_check(pw, pb, pl, scheduler.e, epoch=pk))
    result.weights = w
    return result
