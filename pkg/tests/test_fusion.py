import itertools
import math

import numpy as np
import pytest

from gcnbert import tensor as T
from gcnbert.fusion import cross_entropy, fuse, predict, prediction, probabilities, ranking


def _t(a, grad=False):
    return T.Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def test_fuse_examples(rng):
    u = rng.uniform(-1, 1, size=5)
    np.testing.assert_array_equal(fuse(_t(u), _t(np.zeros(5))).data, u)
    np.testing.assert_array_equal(fuse(_t(u), _t(-u)).data, np.zeros(5))
    np.testing.assert_allclose(fuse(_t([0.1, -0.2]), _t([0.3, 0.4])).data, [0.4, 0.2], atol=1e-15)
    with pytest.raises(T.ShapeError):
        fuse(_t([1.0, 2.0]), _t([1.0]))


def test_fuse_zero_temporal_head_is_identity():
    for seed in range(100):
        u = np.tanh(np.random.default_rng(seed).normal(size=7))
        assert np.array_equal(fuse(_t(u), _t(np.zeros(7))).data, u)


def test_cross_entropy_examples():
    assert math.isclose(cross_entropy(_t([0.0, 0.0]), 0).item(), math.log(2), abs_tol=1e-12)
    for g in (2, 7, 100):
        assert math.isclose(cross_entropy(_t(np.full(g, 0.3)), g - 1).item(), math.log(g), abs_tol=1e-12)
    assert abs(cross_entropy(_t([1.0, 0.0, 0.0]), 0).item() - 0.551445) < 1e-5
    assert math.isclose(cross_entropy(_t([1.0, 0.0, 0.0]), 0).item(), -math.log(math.e / (math.e + 2)))


def test_cross_entropy_batch_mean(rng):
    x = rng.normal(size=(4, 3))
    y = np.array([0, 2, 1, 2])
    each = [cross_entropy(_t(x[i]), y[i]).item() for i in range(4)]
    assert math.isclose(cross_entropy(_t(x), y).item(), sum(each) / 4, rel_tol=1e-14)


def test_cross_entropy_errors():
    with pytest.raises(ValueError):
        cross_entropy(_t([0.0, 1.0]), 2)
    with pytest.raises(ValueError):
        cross_entropy(_t([0.0, 1.0]), -1)


def test_cross_entropy_decreases_toward_zero():
    losses = [cross_entropy(_t([z, 0.0, 0.5]), 0).item() for z in np.linspace(0, 30, 31)]
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert 0 <= losses[-1] < 1e-12


def test_cross_entropy_gradient_is_softmax_minus_one_hot():
    for seed in range(100):
        r = np.random.default_rng(seed)
        x = _t(r.normal(size=6), grad=True)
        target = int(r.integers(6))
        with T.Tape() as tape:
            loss = cross_entropy(x, target)
        tape.backward(loss)
        expected = probabilities(x.data) - np.eye(6)[target]
        np.testing.assert_allclose(x.grad, expected, atol=1e-10, rtol=0)


def test_probabilities(rng):
    p = probabilities(rng.normal(size=(3, 9)))
    assert (p >= 0).all()
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_predict_examples():
    assert predict([0.9, 0.1, 0.5], 2).tolist() == [0, 2]
    assert predict([0.3, 0.3, 0.3], 1).tolist() == [0]
    assert ranking([0.2, 0.5, 0.2, 0.5]).tolist() == [1, 3, 0, 2]
    for k in (0, 4):
        with pytest.raises(ValueError):
            predict([0.9, 0.1, 0.5], k)


def _oracle_rank(x):
    # exhaustive: the permutation whose scores are non-increasing with ties by id
    for perm in itertools.permutations(range(len(x))):
        if all((x[a], -a) > (x[b], -b) for a, b in zip(perm, perm[1:])):
            return list(perm)


def test_predict_matches_exhaustive_oracle():
    for seed in range(100):
        r = np.random.default_rng(seed)
        # coarse values so ties actually happen
        x = np.round(r.normal(size=5), 1)
        full = _oracle_rank(x)
        for k in range(1, 6):
            assert predict(x, k).tolist() == full[:k]


def test_predict_shift_invariant():
    for seed in range(100):
        r = np.random.default_rng(seed)
        x = r.normal(size=8)
        assert ranking(x + r.normal() * 10).tolist() == ranking(x).tolist()


def test_prediction_is_permutation(rng):
    pred = prediction(rng.normal(size=12))
    assert sorted(pred.ranking.tolist()) == list(range(12))
    assert math.isclose(pred.probabilities.sum(), 1.0, abs_tol=1e-12)
