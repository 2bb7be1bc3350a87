import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apw.errors import ConfigError, InvalidInputError
from apw.variants import (
    MixPair,
    SamplerState,
    cross_entropy,
    mapw_coefficients,
    mix_batch,
    mixup_loss,
    sapw_mode_after_completion,
    sapw_round,
    standard_mixup_lambda,
)
from apw.weighting import WeightingMode


def _run_sampler(n, r_s, seed, weights=None):
    rng = np.random.default_rng(seed)
    w = np.full(n, 1.0 / n) if weights is None else weights
    state = SamplerState(n, r_s)
    history = [state.included.copy()]
    while not state.done:
        state = sapw_round(w, state, rng)
        history.append(state.included.copy())
    return state, history


def test_sapw_600_schedule():
    state, hist = _run_sampler(600, 0.05, 0)
    assert state.rounds == 20
    sizes = [h.sum() for h in hist]
    assert np.all(np.diff(sizes) == 30)
    assert state.included.all()


def test_sapw_rejects_finished_state():
    state, _ = _run_sampler(40, 0.25, 0)
    with pytest.raises(InvalidInputError):
        sapw_round(np.full(40, 1 / 40), state, np.random.default_rng(0))


def test_sapw_concentrated_weight_is_drawn():
    # one draw per round; nearly all mass on index 2
    w = np.array([1e-12, 1e-12, 1.0 - 2e-12])
    for seed in range(20):
        s = sapw_round(w, SamplerState(3, 1 / 3), np.random.default_rng(seed))
        assert s.indices.tolist() == [2]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(5, 200), r_s=st.floats(0.02, 1.0))
def test_sapw_chain_and_round_bound(seed, n, r_s):
    if math.floor(r_s * n) == 0:
        return
    w = np.random.default_rng(seed).random(n) + 1e-3
    state, hist = _run_sampler(n, r_s, seed, w / w.sum())
    for a, b in zip(hist, hist[1:]):
        assert np.all(b >= a) and b.sum() > a.sum()
    m = math.floor(r_s * n)
    assert state.rounds == n // m
    if r_s * n == m:
        assert state.rounds <= math.ceil(1 / r_s)


def test_sapw_deterministic():
    a = _run_sampler(100, 0.1, 7)[1]
    b = _run_sampler(100, 0.1, 7)[1]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_mode_after_completion():
    assert sapw_mode_after_completion("A") == "A"
    assert sapw_mode_after_completion("e") is WeightingMode.E
    with pytest.raises(ConfigError):
        sapw_mode_after_completion("B")


def test_mapw_examples():
    p = mapw_coefficients(0.2, 0.2)
    assert (p.lambda_i, p.lambda_j) == (0.5, 0.5)
    p = mapw_coefficients(0.3, 0.1)
    assert p.lambda_i == pytest.approx(0.75) and p.lambda_j == pytest.approx(0.25)
    with pytest.raises(InvalidInputError):
        mapw_coefficients(0.0, 0.1)


@settings(max_examples=200, deadline=None)
@given(wi=st.floats(1e-6, 1.0), wj=st.floats(1e-6, 1.0), c=st.sampled_from([0.5, 2.0, 4.0, 0.125, 1024.0]))
def test_mapw_scale_invariance(wi, wj, c):
    # power-of-two factors scale exactly, so the pair must match bit for bit
    a, b = mapw_coefficients(wi, wj), mapw_coefficients(c * wi, c * wj)
    assert (a.lambda_i, a.lambda_j) == (b.lambda_i, b.lambda_j)
    assert abs(a.lambda_i + a.lambda_j - 1) <= 1e-12 and a.lambda_i >= 0 and a.lambda_j >= 0


def test_mixup_loss_examples():
    y0, y1 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    pred = np.array([0.6, 0.4])
    assert mixup_loss(pred, y0, y1, MixPair(0, 1, 0.75, 0.25)) == pytest.approx(
        0.75 * -math.log(0.6) + 0.25 * -math.log(0.4), abs=1e-15)
    assert mixup_loss(pred, y0, y0, MixPair(0, 1, 0.3, 0.7)) == pytest.approx(-math.log(0.6), abs=1e-15)
    assert mixup_loss(pred, y0, y1, MixPair(0, 1, 1.0, 0.0)) == -math.log(0.6)
    with pytest.raises(InvalidInputError):
        mixup_loss(np.array([0.7, 0.7]), y0, y1, MixPair(0, 1, 0.5, 0.5))


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), lam=st.floats(0, 1))
def test_mixup_target_linearity(seed, lam):
    rng = np.random.default_rng(seed)
    C = 5
    p = rng.dirichlet(np.ones(C))
    yi, yj = np.eye(C)[rng.integers(C)], np.eye(C)[rng.integers(C)]
    mixed = cross_entropy(lam * yi + (1 - lam) * yj, p)
    assert abs(mixed - mixup_loss(p, yi, yj, MixPair(0, 1, lam, 1 - lam))) <= 1e-10


def test_beta_lambda_moments():
    rng = np.random.default_rng(0)
    lam = standard_mixup_lambda(1.0, rng, size=100_000)
    assert abs(lam.mean() - 0.5) <= 0.01
    assert abs(lam.var() - 1 / 12) <= 0.003
    assert abs(standard_mixup_lambda(0.4, rng, size=100_000).mean() - 0.5) <= 0.01
    with pytest.raises(InvalidInputError):
        standard_mixup_lambda(0.0, rng)


def test_mix_batch_uses_weight_pairs():
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    Xm, li, lj = mix_batch(X, np.array([0.3, 0.1]), np.array([1, 0]))
    assert li == pytest.approx([0.75, 0.25]) and lj == pytest.approx([0.25, 0.75])
    assert Xm[0] == pytest.approx([0.75, 0.25])
