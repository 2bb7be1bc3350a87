"""Cumulative margin diagnostics and numerical checkers for the scheduler's bounds.

A :class:`TheoryTrace` collects, for every epoch in which a weight update was
applied, the step ``alpha_k``, the full-set difficulty vector ``beta_k`` and
the normalizer ``Z_k``.  From it follow the per-sample cumulative margin
``g_K = sum_k alpha_k beta_k``, the cumulative step ``A_K`` and their ratio
``m_K = g_K / A_K``.

Checkers return a :class:`BoundReport`.  Each entry records both sides of its
inequality.  Entries with ``asserted=False`` are informative only (for
instance epochs where clipping was active) and never fail the report.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidInputError

CHAIN_RTOL = 1e-8


@dataclass
class TheoryTrace:
    n: int
    alphas: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    z_history: list = field(default_factory=list)
    gamma_history: list = field(default_factory=list)
    rho_raw: list = field(default_factory=list)
    rho_clipped: list = field(default_factory=list)
    clip_flags: list = field(default_factory=list)
    A: float = 0.0
    g: np.ndarray = None
    exact_chain: bool = True  # every update was a full-set multiplicative step
    tau: float = 0.5

    def __post_init__(self):
        if self.g is None:
            self.g = np.zeros(self.n, dtype=np.float64)

    def __len__(self):
        return len(self.alphas)

    def record(self, update, beta):
        """Accumulate one epoch from an EpochUpdate-like record."""
        accumulate(self, update.alpha, beta)
        self.z_history.append(float(update.z))
        self.gamma_history.append(float(update.gamma))
        self.rho_raw.append(float(update.rho_raw))
        self.rho_clipped.append(float(update.rho_clipped))
        self.clip_flags.append(bool(update.clipped))
        return self

    def beta_matrix(self) -> np.ndarray:
        if not self.betas:
            return np.zeros((0, self.n), dtype=np.int8)
        return np.vstack(self.betas)

    def cumulative(self):
        """Prefix sums: ``(A[K], G[K, n])`` for K = 1..len(trace)."""
        a = np.asarray(self.alphas, dtype=np.float64)
        B = self.beta_matrix().astype(np.float64)
        return np.cumsum(a), np.cumsum(a[:, None] * B, axis=0)

    def margin_ratio(self):
        """m_K for the whole trace, or None when A_K = 0."""
        if self.A == 0:
            return None
        return self.g / self.A

    def to_arrays(self) -> dict:
        return {
            "n": np.int64(self.n),
            "alphas": np.asarray(self.alphas, dtype=np.float64),
            "betas": self.beta_matrix(),
            "z": np.asarray(self.z_history, dtype=np.float64),
            "gamma": np.asarray(self.gamma_history, dtype=np.float64),
            "rho_raw": np.asarray(self.rho_raw, dtype=np.float64),
            "rho_clipped": np.asarray(self.rho_clipped, dtype=np.float64),
            "clipped": np.asarray(self.clip_flags, dtype=bool),
            "exact_chain": np.bool_(self.exact_chain),
            "tau": np.float64(self.tau),
        }

    @classmethod
    def from_arrays(cls, arr) -> "TheoryTrace":
        tr = cls(int(arr["n"]), exact_chain=bool(arr["exact_chain"]), tau=float(arr["tau"]))
        for a, b in zip(arr["alphas"], arr["betas"]):
            accumulate(tr, float(a), b)
        tr.z_history = [float(v) for v in arr["z"]]
        tr.gamma_history = [float(v) for v in arr["gamma"]]
        tr.rho_raw = [float(v) for v in arr["rho_raw"]]
        tr.rho_clipped = [float(v) for v in arr["rho_clipped"]]
        tr.clip_flags = [bool(v) for v in arr["clipped"]]
        return tr


@dataclass(frozen=True)
class BoundConfig:
    theta: float
    window: tuple[int, int] | None = None  # (K, delta): epochs K+1 .. K+delta

    def __post_init__(self):
        if not self.theta > 0:
            raise InvalidInputError(f"theta must be > 0, got {self.theta}")
        if self.window is not None:
            K, d = self.window
            if K < 0 or d < 1:
                raise InvalidInputError(f"invalid window {self.window}")


@dataclass
class Check:
    name: str
    epoch: int | None
    lhs: float | None
    rhs: float | None
    relation: str
    passed: bool | None  # None: not applicable
    asserted: bool = True
    note: str = ""


@dataclass
class BoundReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.asserted and c.passed is not None)

    def failures(self) -> list:
        return [c for c in self.checks if c.asserted and c.passed is False]

    def by_name(self, name) -> list:
        return [c for c in self.checks if c.name == name]

    def extend(self, other: "BoundReport") -> "BoundReport":
        self.checks.extend(other.checks)
        return self

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [asdict(c) for c in self.checks]}

    def to_json(self) -> str:
        return json.dumps(_finite_or_str(self.to_dict()), indent=2, sort_keys=True)


def _finite_or_str(obj):
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _finite_or_str(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite_or_str(v) for v in obj]
    return obj


def accumulate(trace: TheoryTrace, alpha: float, beta) -> TheoryTrace:
    b = np.asarray(beta)
    if b.shape != (trace.n,):
        raise InvalidInputError(f"difficulty vector has shape {b.shape}, expected ({trace.n},)")
    b = b.astype(np.int8)
    trace.alphas.append(float(alpha))
    trace.betas.append(b)
    trace.g += alpha * b
    trace.A = math.fsum(trace.alphas)
    return trace


def retention_stats(trace: TheoryTrace) -> tuple[float, float, float]:
    """(fraction with g <= 0, mean exp(-g), product of Z) at the end of the trace."""
    frac = float(np.mean(trace.g <= 0))
    mean_exp = float(np.mean(np.exp(-trace.g)))
    prod_z = math.exp(math.fsum(math.log(z) for z in trace.z_history))
    return frac, mean_exp, prod_z


def _rel_close(a: float, b: float, rtol: float) -> bool:
    return abs(a - b) <= rtol * max(abs(a), abs(b))


def theorem2_bound(trace: TheoryTrace, q: float, rtol: float = CHAIN_RTOL) -> BoundReport:
    """Retention chain at every prefix K of the trace.

    frac(g_K <= 0) <= mean exp(-g_K) == prod Z_k <= exp(-(4/q) sum gamma_k^2)

    The equality is asserted only for exact full-set chains (E-weighting).
    The last inequality is asserted on epochs whose rho was not clipped and
    only for tau = 1/2.
    """
    rep = BoundReport()
    if len(trace) == 0:
        rep.checks.append(Check("retention_vacuous", 0, 1.0, 1.0, "<=", True, note="empty trace"))
        return rep
    _, G = trace.cumulative()
    log_z = np.cumsum(np.log(np.asarray(trace.z_history)))
    gsq = np.cumsum(np.asarray(trace.gamma_history) ** 2)
    for K in range(1, len(trace) + 1):
        g = G[K - 1]
        frac = float(np.mean(g <= 0))
        mean_exp = float(np.mean(np.exp(-g)))
        prod_z = float(math.exp(log_z[K - 1]))
        rhs = math.exp(-(4.0 / q) * gsq[K - 1])
        clipped = trace.clip_flags[K - 1]
        rep.checks.append(Check("retention_indicator", K, frac, mean_exp, "<=", frac <= mean_exp))
        if trace.exact_chain:
            rep.checks.append(
                Check("retention_identity", K, mean_exp, prod_z, "==", _rel_close(mean_exp, prod_z, rtol))
            )
        else:
            rep.checks.append(
                Check("retention_identity", K, mean_exp, prod_z, "==", None,
                      note="not applicable: weights renormalized per batch")
            )
        applicable = trace.tau == 0.5
        rep.checks.append(
            Check(
                "retention_exponential",
                K,
                prod_z,
                rhs,
                "<=",
                (prod_z <= rhs * (1 + 1e-12)) if applicable else None,
                asserted=not clipped,
                note="clipped epoch" if clipped else ("" if applicable else "tau != 1/2"),
            )
        )
    return rep


def theorem1_check(weights_k, beta_k, l_apw: float, e: float, next_beta=None, next_rho=None, epoch=None) -> BoundReport:
    """Hard-sample mass versus reweighted loss / e for one epoch."""
    w = np.asarray(weights_k, dtype=np.float64)
    b = np.asarray(beta_k)
    if w.shape != b.shape:
        raise InvalidInputError("weights and difficulty vector differ in length")
    hard = b < 0
    lhs = float(w[hard].sum())
    rhs = l_apw / e
    rep = BoundReport()
    if not hard.any():
        rep.checks.append(Check("hard_mass_bound", epoch, lhs, rhs, "<", True, note="no hard samples"))
    else:
        if not l_apw > 0:
            raise InvalidInputError("reweighted loss must be positive when hard samples exist")
        rep.checks.append(Check("hard_mass_bound", epoch, lhs, rhs, "<", lhs < rhs))
    if next_beta is not None and next_rho is not None:
        same = np.array_equal(np.asarray(next_beta) < 0, hard)
        rep.checks.append(
            Check("next_rho_bound", epoch, float(next_rho), rhs, "<",
                  (next_rho < rhs or not hard.any()) if same else None,
                  note="" if same else "hard set changed")
        )
    return rep


def delta_fn(theta: float, gamma: float, q: float) -> float:
    if not abs(gamma) < 0.5:
        raise InvalidInputError(f"|gamma| must be < 1/2, got {gamma}")
    if not theta > 0:
        raise InvalidInputError(f"theta must be > 0, got {theta}")
    if not q >= 2:
        raise InvalidInputError(f"q must be >= 2, got {q}")
    return (1 - 2 * gamma) ** ((1 - theta) / q) * (1 + 2 * gamma) ** ((1 + theta) / q)


def log_delta(theta: float, gamma: float, q: float) -> float:
    return ((1 - theta) * math.log1p(-2 * gamma) + (1 + theta) * math.log1p(2 * gamma)) / q


def theorem3_check(trace: TheoryTrace, config: BoundConfig, q: float) -> BoundReport:
    """Lower bound on the fraction of samples with m_K > theta, at every prefix K with A_K > 0.

    With a window (K, delta) the report also carries the window's update
    factor eta and the per-sample ratio comparison for samples whose m grew
    over the window.
    """
    rep = BoundReport()
    theta = config.theta
    if len(trace) == 0:
        return rep
    A, G = trace.cumulative()
    gam = np.asarray(trace.gamma_history)
    log_d = np.cumsum([log_delta(theta, g, q) for g in gam])
    for K in range(1, len(trace) + 1):
        aK = A[K - 1]
        if not aK > 0:
            rep.checks.append(Check("margin_fraction", K, None, None, ">=", None, note="A_K <= 0: not applicable"))
            continue
        frac = float(np.mean(G[K - 1] / aK > theta))
        rhs = 1.0 - math.exp(log_d[K - 1])
        ok = frac >= rhs - 1e-12
        rep.checks.append(
            Check("margin_fraction", K, frac, rhs, ">=", ok, asserted=trace.exact_chain and trace.tau == 0.5,
                  note="" if trace.exact_chain else "per-batch renormalization: informative only")
        )
    if config.window is not None:
        K0, d = config.window
        if K0 + d > len(trace):
            raise InvalidInputError(f"window {config.window} exceeds trace length {len(trace)}")
        eta = math.exp(float(np.sum([log_delta(theta, g, q) for g in gam[K0:K0 + d]])))
        rep.checks.append(Check("window_eta", K0 + d, eta, None, "info", None, asserted=False))
        rep.extend(lemma1_check(trace, (K0, d)))
    return rep


def lemma1_check(trace: TheoryTrace, window) -> BoundReport:
    """Per-sample ratio inequality over a window with A_K > 0 and positive window step."""
    K0, d = window
    rep = BoundReport()
    A, G = trace.cumulative()
    a0 = A[K0 - 1] if K0 > 0 else 0.0
    g0 = G[K0 - 1] if K0 > 0 else np.zeros(trace.n)
    a1, g1 = A[K0 + d - 1], G[K0 + d - 1]
    if not (a0 > 0 and a1 - a0 > 0):
        rep.checks.append(Check("ratio_increment", K0 + d, None, None, ">", None, note="window is not Delta+"))
        return rep
    m0, m1 = g0 / a0, g1 / a1
    premise = (m1 > m0) & (m0 > 0)
    lhs = (g1 - g0) / (a1 - a0)
    holds = lhs[premise] > m0[premise]
    rep.checks.append(
        Check("ratio_increment", K0 + d, float(holds.sum()), float(premise.sum()), "==",
              bool(holds.all()), note=f"{int(premise.sum())} samples satisfy the premise")
    )
    return rep


def lemma4_check(gammas, q: float, theta_grid) -> BoundReport:
    """delta(theta, g_k) <= delta(g_k, g_k) <= delta(g_min, g_min) < 1 over the admissible grid."""
    gam = np.asarray(gammas, dtype=np.float64)
    rep = BoundReport()
    if gam.size == 0 or not gam.min() > 0:
        rep.checks.append(Check("delta_chain", None, None, None, "<=", None, note="needs all gamma in (0, 1/2)"))
        return rep
    gmin = float(gam.min())
    d_min = delta_fn(gmin, gmin, q)
    for k, g in enumerate(gam, start=1):
        d_gg = delta_fn(g, g, q)
        for th in theta_grid:
            if not 0 < th <= g < 0.5:
                continue
            d_tg = delta_fn(th, g, q)
            ok = d_tg <= d_gg and d_gg <= d_min and d_min < 1
            rep.checks.append(
                Check("delta_chain", k, d_tg, d_min, "<=", bool(ok), note=f"theta={float(th)!r} gamma={float(g)!r}")
            )
    return rep


@dataclass(frozen=True)
class PhaseReport:
    convergence: bool
    plus: bool
    A_K: float


def classify_window(rhos, alphas, window) -> PhaseReport:
    """Classify epochs K+1..K+delta: all rho < 1/2, and additionally A_K > 0."""
    K, d = window
    rhos = list(rhos)
    if K < 0 or d < 1 or K + d > len(rhos):
        raise InvalidInputError(f"window {window} invalid for {len(rhos)} epochs")
    conv = all(r < 0.5 for r in rhos[K:K + d])
    a_k = math.fsum(list(alphas)[:K])
    return PhaseReport(conv, conv and a_k > 0, a_k)


def phase_classifier(trace: TheoryTrace, window) -> PhaseReport:
    return classify_window(trace.rho_clipped, trace.alphas, window)


def convergence_window(trace: TheoryTrace):
    """Longest trailing run of epochs with rho < 1/2, as ``(K, delta)``; None if the last epoch is not in one."""
    r = np.asarray(trace.rho_clipped)
    if r.size == 0 or not r[-1] < 0.5:
        return None
    above = np.flatnonzero(r >= 0.5)
    K = int(above[-1]) + 1 if above.size else 0
    return K, r.size - K


def default_theta(trace: TheoryTrace, window=None) -> float | None:
    """Smallest gamma of the inspected window, if positive."""
    gam = np.asarray(trace.gamma_history)
    if window is not None:
        K, d = window
        gam = gam[K:K + d]
    if gam.size == 0 or not gam.min() > 0:
        return None
    return float(gam.min())


def eprop(losses, threshold: float) -> float:
    """Fraction of samples whose loss does not exceed ``threshold``."""
    if not threshold > 0:
        raise InvalidInputError(f"threshold must be > 0, got {threshold}")
    L = np.asarray(losses, dtype=np.float64)
    if L.size == 0:
        raise InvalidInputError("proportion undefined for an empty set")
    return float(np.mean(L <= threshold))


def tacc(predicted, labels) -> float:
    p = np.asarray(predicted)
    y = np.asarray(labels)
    if p.shape != y.shape:
        raise InvalidInputError("prediction and label vectors differ in length")
    if p.size == 0:
        raise InvalidInputError("accuracy undefined for an empty set")
    return float(np.mean(p == y))
