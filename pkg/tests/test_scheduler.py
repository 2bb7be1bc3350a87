import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apw.errors import ConfigError, InvalidInputError
from apw.scheduler import (
    SchedulerConfig,
    closed_form_z,
    epoch_step,
    hard_mass,
    mark_difficulty,
    reweighted_loss,
    update_weights,
    weight_change,
)

LN2 = math.log(2.0)


def test_mark_difficulty_boundary_is_easy():
    assert mark_difficulty([LN2], LN2).tolist() == [1]
    assert mark_difficulty([0.0, 10.0], 0.3).tolist() == [1, -1]
    assert mark_difficulty([0.2999, 0.3001], 0.3).tolist() == [1, -1]


@pytest.mark.parametrize("bad", [[np.nan], [np.inf], [-0.1]])
def test_mark_difficulty_rejects_bad_losses(bad):
    with pytest.raises(InvalidInputError):
        mark_difficulty(bad, 0.3)


def test_hard_mass_examples():
    assert hard_mass(np.full(4, 0.25), [1, 1, 1, -1]) == 0.25
    assert hard_mass(np.full(4, 0.25), [1, 1, 1, 1]) == 0.0
    assert hard_mass([0.1, 0.2, 0.3, 0.4], [-1, 1, -1, 1]) == pytest.approx(0.4, abs=1e-15)
    with pytest.raises(InvalidInputError):
        hard_mass([0.5, 0.5], [1, -1, 1])


def test_weight_change_examples():
    assert weight_change(0.5, SchedulerConfig(e=1.0, q=2)).alpha == 0.0
    rho = 1.0 / (1.0 + math.exp(2.0))
    assert weight_change(rho, SchedulerConfig(e=1.0, q=2)).alpha == pytest.approx(1.0, abs=1e-14)
    upd = weight_change(0.0, SchedulerConfig(e=1.0, q=100))
    assert upd.clipped and upd.rho_clipped == 1e-4 and upd.rho_raw == 0.0
    assert upd.alpha == pytest.approx(math.log(9999) / 100, abs=1e-15)
    assert upd.alpha == pytest.approx(0.09210, abs=1e-5)
    assert upd.gamma == 0.5 - 1e-4


def test_weight_change_rejects_out_of_range():
    with pytest.raises(InvalidInputError):
        weight_change(1.2, SchedulerConfig(e=1.0, q=2))


@pytest.mark.parametrize("kw", [dict(e=0.0, q=2), dict(e=1.0, q=1.5), dict(e=1.0, q=2, tau=1.0),
                                dict(e=1.0, q=2, rho_clip=(0.6, 0.4))])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        SchedulerConfig(**kw)


def test_update_weights_examples():
    w, z = update_weights([0.5, 0.5], [1, -1], LN2)
    assert w == pytest.approx([0.2, 0.8], abs=1e-15)
    assert z == pytest.approx(1.25, abs=1e-15)
    w0 = np.array([0.1, 0.6, 0.3])
    w, z = update_weights(w0, [1, -1, 1], 0.0)
    assert np.array_equal(w, w0) and z == 1.0
    w, z = update_weights(np.full(4, 0.25), [1, 1, 1, 1], 0.3)
    assert w == pytest.approx([0.25] * 4, abs=1e-16)
    assert z == pytest.approx(math.exp(-0.3), abs=1e-15)


def test_reweighted_loss_examples():
    assert reweighted_loss([0.5, 0.5], [1.0, 3.0]) == 2.0
    assert reweighted_loss([0.2, 0.8], [1.0, 3.0]) == pytest.approx(2.6, abs=1e-15)
    assert reweighted_loss([0.2, 0.8], [0.0, 0.0]) == 0.0


def test_epoch_step_fixed_point_and_hand_oracle():
    cfg = SchedulerConfig(e=LN2, q=2)
    w, upd, beta = epoch_step([0.5, 0.5], [0.1, 5.0], cfg)
    assert upd.rho_raw == 0.5 and upd.alpha == 0.0 and w.tolist() == [0.5, 0.5]
    w, upd, _ = epoch_step([0.9, 0.1], [0.1, 5.0], cfg)
    assert upd.rho_raw == pytest.approx(0.1)
    assert upd.alpha == pytest.approx(0.5 * math.log(9), abs=1e-14)
    # e^-alpha = 1/3 on the easy sample, e^alpha = 3 on the hard one
    assert w[0] == pytest.approx(0.9 / 3 / (0.9 / 3 + 0.1 * 3), abs=1e-14)


def test_epoch_step_all_easy_keeps_weights():
    w0 = np.array([0.1, 0.2, 0.7])
    w, upd, _ = epoch_step(w0, [0.0, 0.1, 0.2], SchedulerConfig(e=0.3, q=4))
    assert upd.clipped and upd.rho_clipped == 1e-4 and upd.alpha > 0
    assert w == pytest.approx(w0, abs=1e-15)


def _simplex(n, rng):
    w = rng.random(n) + 1e-3
    return w / w.sum()


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 60), alpha=st.floats(-3, 3))
def test_normalization_and_closed_form(seed, n, alpha):
    rng = np.random.default_rng(seed)
    w = _simplex(n, rng)
    beta = rng.choice([-1, 1], size=n)
    new, z = update_weights(w, beta, alpha)
    assert abs(new.sum() - 1.0) <= 1e-12
    assert new.min() > 0
    rho = w[beta < 0].sum()
    assert abs(z - closed_form_z(rho, alpha)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(-2, 2))
def test_sign_and_ratio_law(seed, alpha):
    rng = np.random.default_rng(seed)
    n = 8
    w = _simplex(n, rng)
    beta = np.array([1, -1] * (n // 2))
    new, _ = update_weights(w, beta, alpha)
    for h, ez in ((1, 0), (3, 2)):
        assert new[h] / new[ez] == pytest.approx((w[h] / w[ez]) * math.exp(2 * alpha), rel=1e-10)
    # unnormalized multiplier exceeds one exactly when signs of beta and alpha differ
    for b in (1, -1):
        if abs(alpha) > 1e-12:
            assert (math.exp(-alpha * b) > 1) == (np.sign(b) != np.sign(alpha))


@settings(max_examples=300, deadline=None)
@given(rho=st.floats(1e-4, 1 - 1e-4), q=st.floats(2, 500))
def test_tau_half_reduces_to_plain_rule(rho, q):
    upd = weight_change(rho, SchedulerConfig(e=1.0, q=q))
    assert upd.alpha == math.log((1 - rho) / rho) / q


@settings(max_examples=200, deadline=None)
@given(r1=st.floats(1e-4, 1 - 1e-4), r2=st.floats(1e-4, 1 - 1e-4), tau=st.floats(0.05, 0.95))
def test_alpha_strictly_decreasing(r1, r2, tau):
    if abs(r1 - r2) < 1e-9:
        return
    cfg = SchedulerConfig(e=1.0, q=3.0, tau=tau)
    lo, hi = sorted((r1, r2))
    assert weight_change(lo, cfg).alpha > weight_change(hi, cfg).alpha


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), e=st.floats(0.05, 2.0))
def test_hard_mass_bound_after_epoch_step(seed, e):
    rng = np.random.default_rng(seed)
    n = 30
    L = rng.exponential(1.0, size=n)
    w, _, beta = epoch_step(_simplex(n, rng), L, SchedulerConfig(e=e, q=5))
    hm = w[beta < 0].sum()
    if hm > 0:
        assert hm < reweighted_loss(w, L) / e


def test_sign_of_alpha_follows_phase():
    cfg = SchedulerConfig(e=1.0, q=2)
    for rho in np.linspace(0.01, 0.99, 21):
        a = weight_change(float(rho), cfg).alpha
        assert np.sign(a) == np.sign(0.5 - rho) or abs(rho - 0.5) < 1e-12
