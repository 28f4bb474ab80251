import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from viking import metrics
from viking.errors import ContractError


def random_probs(rng, n, c, quantize):
    p = rng.dirichlet(np.ones(c) * 0.7, size=n)
    if quantize:  # many exact ties and bin-edge confidences
        p = np.round(p * 15) / 15
        p[:, 0] += 1 - p.sum(axis=1)
    return p


def brute_calibration(probs, labels, bins):
    records = [(max(row), int(np.argmax(row)) == y) for row, y in zip(probs, labels)]
    ece, mce, n = 0.0, 0.0, len(records)
    for b in range(bins):
        members = [(c, ok) for c, ok in records
                   if (b < c * bins <= b + 1) or (b == 0 and c * bins <= 0)
                   or (b == bins - 1 and c * bins > bins)]
        if not members:
            continue
        acc = sum(ok for _, ok in members) / len(members)
        conf = sum(c for c, _ in members) / len(members)
        ece += len(members) / n * abs(acc - conf)
        mce = max(mce, abs(acc - conf))
    return ece, mce


def brute_auroc(a, b):
    wins = 0.0
    for x, y in itertools.product(a, b):
        wins += 1.0 if y > x else 0.5 if y == x else 0.0
    return wins / (len(a) * len(b))


def brute_mixture_nll(outputs, targets, s):
    total = 0.0
    S, N, O = outputs.shape
    for i in range(N):
        dens = 0.0
        for k in range(S):
            sq = sum((outputs[k, i, o] - targets[i, o]) ** 2 for o in range(O))
            dens += math.exp(-0.5 * sq / s ** 2) / (2 * math.pi * s ** 2) ** (O / 2)
        total -= math.log(dens / S)
    return total / N


instances = st.tuples(st.integers(0, 2**32 - 1), st.integers(1, 30), st.integers(2, 5),
                      st.booleans())


@settings(max_examples=150)
@given(instances)
def test_calibration_matches_brute_force(case):
    seed, n, c, quantize = case
    rng = np.random.default_rng(seed)
    p = random_probs(rng, n, c, quantize)
    y = rng.integers(0, c, n)
    bins = int(rng.integers(1, 20))
    ece, mce = metrics.calibration(p, y, bins)
    ref_ece, ref_mce = brute_calibration(p, y, bins)
    assert ece == pytest.approx(ref_ece, abs=1e-12)
    assert mce == pytest.approx(ref_mce, abs=1e-12)
    assert 0 <= ece <= mce <= 1


@settings(max_examples=150)
@given(st.integers(0, 2**32 - 1), st.integers(1, 25), st.integers(1, 25), st.booleans())
def test_auroc_matches_pairwise_count(seed, na, nb, ties):
    rng = np.random.default_rng(seed)
    draw = (lambda k: rng.integers(0, 4, k).astype(float)) if ties else rng.standard_normal
    a, b = draw(na), draw(nb) + 0.3
    assert metrics.auroc(a, b) == brute_auroc(a, b)


@settings(max_examples=150)
@given(instances)
def test_classification_nll_matches_brute_force(case):
    seed, n, c, _ = case
    rng = np.random.default_rng(seed)
    p = random_probs(rng, n, c, False)
    y = rng.integers(0, c, n)
    ref = sum(-math.log(max(p[i, y[i]], 1e-12)) for i in range(n)) / n
    assert metrics.classification_metrics(p, y)["nll"] == pytest.approx(ref, abs=1e-12)


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 8), st.integers(1, 3))
def test_regression_nll_matches_brute_force(seed, S, N, O):
    rng = np.random.default_rng(seed)
    out = rng.standard_normal((S, N, O))
    t = rng.standard_normal((N, O))
    s = float(rng.uniform(0.2, 2))
    assert metrics.regression_nll(out, t, s) == pytest.approx(brute_mixture_nll(out, t, s),
                                                               rel=1e-12, abs=1e-12)


def test_calibration_worked_example():
    p = np.array([[0.9, 0.1], [0.8, 0.2], [0.4, 0.6], [0.55, 0.45]])
    y = np.array([0, 1, 1, 0])
    # bins of width 0.5: (0, .5] empty; (.5, 1] holds all four, acc 3/4, conf 0.7125
    ece, mce = metrics.calibration(p, y, bins=2)
    assert ece == pytest.approx(0.0375)
    assert mce == pytest.approx(0.0375)


def test_calibration_perfect_and_empty():
    p = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert metrics.calibration(p, [0, 1]) == (0.0, 0.0)
    with pytest.raises(ContractError):
        metrics.calibration(np.zeros((0, 2)), np.zeros(0, dtype=int))


def test_ood_score_population_variance():
    p = np.array([[0.9, 0.1], [0.5, 0.5]])
    assert metrics.ood_score(p) == pytest.approx(0.04)
    same = np.repeat(np.array([[[0.3, 0.7]]]), 5, axis=0)
    np.testing.assert_array_equal(metrics.ood_score(same), [0.0])
    with pytest.raises(ContractError):
        metrics.ood_score(p[:1])


@given(st.integers(0, 2**32 - 1), st.integers(2, 30))
def test_spread_matches_numpy_and_vanishes_for_identical_draws(seed, S):
    rng = np.random.default_rng(seed)
    y = rng.standard_normal((S, 4, 1)) * 10 ** rng.uniform(-3, 3)
    mean, std = metrics.regression_bands(y)
    np.testing.assert_allclose(mean, y.mean(0), rtol=1e-12, atol=1e-15 * np.abs(y).max())
    np.testing.assert_allclose(std, y.std(0, ddof=1), rtol=1e-10)
    same = np.repeat(y[:1], S, axis=0)
    assert np.all(metrics.regression_bands(same)[1] == 0)
    assert np.all(metrics.regression_bands(same)[0] == y[0])
    p = rng.dirichlet(np.ones(3), size=(S, 5))
    np.testing.assert_allclose(metrics.ood_score(p), p.var(0).max(-1), rtol=1e-10, atol=1e-16)
    assert np.all(metrics.ood_score(np.repeat(p[:1], S, axis=0)) == 0)


def test_auroc_extremes():
    assert metrics.auroc([0, 1], [2, 3]) == 1.0
    assert metrics.auroc([2, 3], [0, 1]) == 0.0
    assert metrics.auroc([1, 1], [1, 1]) == 0.5


def test_regression_bands_use_sample_std():
    out = np.array([[1.0], [3.0]])
    mean, std = metrics.regression_bands(out)
    assert mean[0] == 2.0 and std[0] == pytest.approx(np.sqrt(2.0))


def test_mean_predictive_shape_check():
    with pytest.raises(ContractError):
        metrics.mean_predictive(np.ones((2, 3)))
    np.testing.assert_allclose(metrics.mean_predictive(np.ones((4, 2, 3)) / 3), np.ones((2, 3)) / 3)
