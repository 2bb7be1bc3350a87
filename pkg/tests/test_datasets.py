import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apw.datasets import (
    LabeledDataset,
    NoiseSpec,
    default_threshold,
    gen_gaussian_2class,
    inject_uniform_noise,
    io_roundtrip,
    read_csv,
    separability_check,
    split,
    write_csv,
)
from apw.errors import ConfigError, InvalidInputError


def test_separability_examples():
    xor = np.array([[0, 0], [1, 1], [0, 1], [1, 0]], dtype=float)
    assert separability_check(xor, [0, 0, 1, 1]) is False
    assert separability_check([[0.0, 0.0], [1.0, 1.0]], [0, 1]) is True
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(-20, 1, size=(50, 2)), rng.normal(20, 1, size=(50, 2))])
    res = separability_check(X, np.repeat([0, 1], 50), return_witness=True)
    assert res.separable
    s = np.repeat([-1.0, 1.0], 50)
    assert np.all(s * (X @ res.witness[:2] + res.witness[2]) > 0)


def test_overlapping_duplicate_point_is_not_separable():
    X = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
    assert separability_check(X, [0, 1, 1]) is False


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_witness_agrees_with_decision(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(20, 2))
    y = rng.integers(0, 2, size=20)
    y[:2] = [0, 1]
    res = separability_check(X, y, return_witness=True)
    if res.separable:
        s = np.where(y == 1, 1.0, -1.0)
        assert np.all(s * (X @ res.witness[:2] + res.witness[2]) > 0)


def test_generator_balance_and_separability():
    ds = gen_gaussian_2class(rng=np.random.default_rng(3))
    assert len(ds) == 600 and np.bincount(ds.y).tolist() == [300, 300]
    assert separability_check(ds.X, ds.y)
    w = np.asarray(ds.meta["witness"])
    assert np.all((2 * ds.y - 1) * (ds.X @ w[:2] + w[2]) > 0)


def test_generator_is_deterministic():
    a = gen_gaussian_2class(rng=np.random.default_rng(11))
    b = gen_gaussian_2class(rng=np.random.default_rng(11))
    assert np.array_equal(a.X, b.X) and a.meta == b.meta


def test_generator_rejects_bad_config():
    with pytest.raises(ConfigError):
        gen_gaussian_2class(n=3)
    with pytest.raises(ConfigError):
        gen_gaussian_2class(std=0)


@pytest.mark.parametrize("p", [0.2, 0.4])
def test_noise_rate_and_no_identity_flips(p):
    rng = np.random.default_rng(7)
    y = rng.integers(0, 5, size=100_000)
    yn, flip = inject_uniform_noise(y, p, 5, rng)
    assert abs(np.mean(yn != y) - p) <= 0.01
    assert np.array_equal(yn != y, flip)
    # replacements are spread evenly over the other classes
    off = (yn[flip] - y[flip]) % 5
    assert np.all(off > 0)
    assert np.allclose(np.bincount(off, minlength=5)[1:] / flip.sum(), 0.25, atol=0.01)


def test_noise_rejects_bad_rate():
    with pytest.raises(ConfigError):
        inject_uniform_noise([0, 1], 1.0, 2, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        NoiseSpec("weird", 0.1)


def test_split_sizes_and_identity():
    ds = gen_gaussian_2class(rng=np.random.default_rng(0))
    tr, te = split(ds, (0.7, 0.3), np.random.default_rng(1))
    assert (len(tr), len(te)) == (420, 180)
    both = np.vstack([tr.X, te.X])
    assert sorted(map(tuple, both)) == sorted(map(tuple, ds.X))
    (whole,) = split(ds, (1.0,))
    assert np.array_equal(whole.X, ds.X) and np.array_equal(whole.y, ds.y)
    with pytest.raises(ConfigError):
        split(ds, (0.5, 0.4))


def test_default_threshold_values():
    ln2 = math.log(2)
    assert default_threshold(NoiseSpec()) == ln2
    assert abs(default_threshold(NoiseSpec("synthetic", 0.2)) - (ln2 - math.log(0.8))) <= 1e-12
    assert abs(default_threshold(NoiseSpec("inherent", 0.2)) - (ln2 + math.log(0.8))) <= 1e-12
    with pytest.raises(ConfigError):
        default_threshold(NoiseSpec("inherent", 0.6))


def test_csv_roundtrip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    ds = LabeledDataset(rng.normal(size=(50, 3)) * 1e-7, rng.integers(0, 3, 50), rng.integers(0, 3, 50))
    back = io_roundtrip(ds, tmp_path / "d.csv")
    assert np.array_equal(back.X, ds.X) and np.array_equal(back.y, ds.y) and np.array_equal(back.y_clean, ds.y_clean)
    write_csv(ds, tmp_path / "a.csv")
    write_csv(back, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


@pytest.mark.parametrize("text", ["f0,f1\n1,2\n", "f0,y,color\n1,0,red\n", "f0,y\n1\n", "f0,y\nabc,0\n", ""])
def test_csv_rejects_malformed(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(InvalidInputError):
        read_csv(p)
