import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from briges.errors import DataError, DegenerateInputError, ParameterError
from briges.maps import DepthMap
from briges.metrics import (
    absrel, align_least_squares, apply_alignment, average_rank, delta1, evaluate_depth, pairwise_accuracy,
)

import oracles


def dm(values, mask=None):
    return DepthMap(np.atleast_2d(np.asarray(values, dtype=float)), mask)


def test_alignment_examples():
    gt = dm([1.0, 2.0, 5.0, 3.0])
    assert align_least_squares(gt, gt) == pytest.approx((1.0, 0.0), abs=1e-12)
    s, t = align_least_squares(dm((gt.values - 7) / 3), gt)
    assert (s, t) == pytest.approx((3.0, 7.0), abs=1e-12)
    with pytest.raises(DegenerateInputError):
        align_least_squares(dm([2.0, 2.0, 2.0]), dm([1.0, 2.0, 3.0]))


def test_alignment_noisy_matches_oracle():
    rng = np.random.default_rng(0)
    pred = rng.normal(size=10)
    gt = 2 * pred + 1 + rng.normal(scale=0.1, size=10)
    got = align_least_squares(dm(pred), dm(gt))
    assert got == pytest.approx(oracles.least_squares(pred.tolist(), gt.tolist()), abs=1e-9)


def test_apply_alignment_examples():
    x = dm([1.0, 2.0])
    np.testing.assert_array_equal(apply_alignment(x, 1.0, 0.0).values, x.values)
    np.testing.assert_array_equal(apply_alignment(x, 0.0, 4.0).values, [[4.0, 4.0]])
    np.testing.assert_array_equal(apply_alignment(x, 2.0, 1.0).values, [[3.0, 5.0]])


def test_absrel_examples():
    gt = dm([1.0, 2.0, 4.0, 8.0])
    assert absrel(gt, gt) == 0.0
    assert absrel(dm(1.1 * gt.values), gt) == pytest.approx(0.1, abs=1e-15)
    a = dm([1.5, 1.0, 4.0, 10.0])
    assert absrel(a, gt) == pytest.approx(oracles.absrel(a.values.ravel().tolist(), gt.values.ravel().tolist()))
    with pytest.raises(DataError):
        absrel(gt, dm([1.0, 0.0, 1.0, 1.0]))


def test_delta1_examples():
    gt = dm([1.0, 2.0, 4.0, 8.0])
    assert delta1(gt, gt) == 1.0
    assert delta1(dm(gt.values * 1.25), gt) == 0.0
    assert delta1(dm([1.1, 1.3, 0.9, 0.7]), dm([1.0, 1.0, 1.0, 1.0])) == 0.5
    assert delta1(dm([-1.0, 2.0]), dm([1.0, 2.0])) == 0.5


def test_delta1_boundary_from_below_and_above():
    gt = dm([4.0])
    assert delta1(dm([5.0]), gt) == 0.0  # 5/4 == 1.25 exactly
    assert delta1(dm([3.2]), gt) == 0.0  # 4/3.2 == 1.25 exactly
    assert delta1(dm([np.nextafter(5.0, 0)]), gt) == 1.0


def test_masks_respected():
    mask = np.array([[True, True, False]])
    gt = DepthMap(np.array([[1.0, 2.0, -1.0]]), mask)
    pred = DepthMap(np.array([[1.0, 2.0, 100.0]]))
    rep = evaluate_depth(pred, gt)
    assert rep.n_valid == 2 and rep.absrel == pytest.approx(0.0, abs=1e-12) and rep.delta1 == 1.0


def test_pairwise_examples():
    rng = np.random.default_rng(1)
    d = dm(rng.random((4, 5)))
    cells = [(int(r), int(c)) for r, c in zip(rng.integers(0, 4, 20), rng.integers(0, 5, 20))]
    pairs = [(a, b) for a, b in zip(cells[::2], cells[1::2]) if d.values[a] != d.values[b]]
    truth = [(a, b, "a" if d.values[a] < d.values[b] else "b") for a, b in pairs]
    flipped = [(a, b, "b" if l == "a" else "a") for a, b, l in truth]
    assert pairwise_accuracy(d, truth) == 1.0
    assert pairwise_accuracy(d, flipped) == 0.0
    with pytest.raises(DataError):
        pairwise_accuracy(d, [((0, 0), (4, 0), "a")])
    with pytest.raises(DataError):
        pairwise_accuracy(d, [((0, 0), (1, 0), "c")])


def test_pairwise_ties_are_wrong():
    d = dm([[1.0, 1.0, 2.0]])
    assert pairwise_accuracy(d, [((0, 0), (0, 1), "a"), ((0, 0), (0, 2), "a")]) == 0.5


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_pairwise_monotone_invariance(seed):
    rng = np.random.default_rng(seed)
    d = dm(rng.random((3, 4)))
    pairs = [((int(rng.integers(3)), int(rng.integers(4))), (int(rng.integers(3)), int(rng.integers(4))),
              "a" if rng.random() < 0.5 else "b") for _ in range(6)]
    base = pairwise_accuracy(d, pairs)
    assert base == pytest.approx(oracles.pairwise(d.values.tolist(), pairs))
    assert pairwise_accuracy(dm(np.exp(3 * d.values) + 2), pairs) == base


def test_average_rank_examples():
    np.testing.assert_array_equal(average_rank([[0.3], [0.1], [0.2]], [True]), [3, 1, 2])
    np.testing.assert_array_equal(average_rank(np.ones((4, 3)), [True, False, True]), [2.5] * 4)
    with pytest.raises(ParameterError):
        average_rank(np.zeros((0, 2)), [])
    with pytest.raises(ParameterError):
        average_rank([[1.0, 2.0]], [True, True])
    with pytest.raises(ParameterError):
        average_rank([[1.0], [np.nan]], [True])


@pytest.mark.parametrize("seed", range(10))
def test_average_rank_matches_oracle_and_permutes(seed):
    rng = np.random.default_rng(seed)
    table = rng.integers(0, 4, size=(5, 8)).astype(float)  # small integers force ties
    lower = list(rng.random(8) < 0.5)
    got = average_rank(table, lower)
    np.testing.assert_allclose(got, oracles.average_rank(table.tolist(), lower), atol=1e-12)
    assert got.min() >= 1 and got.max() <= 5
    perm = rng.permutation(5)
    np.testing.assert_allclose(average_rank(table[perm], lower), got[perm], atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), a=st.floats(0.1, 10), b=st.floats(-5, 5))
def test_metrics_invariant_to_affine_prediction(seed, a, b):
    rng = np.random.default_rng(seed)
    gt = dm(rng.uniform(1, 10, size=(3, 4)))
    pred = dm(gt.values + rng.normal(scale=0.5, size=(3, 4)))
    r1 = evaluate_depth(pred, gt)
    r2 = evaluate_depth(dm(a * pred.values + b), gt)
    assert r2.absrel == pytest.approx(r1.absrel, abs=1e-9)
    assert r2.delta1 == r1.delta1
    exact = evaluate_depth(dm(a * gt.values + b), gt)
    assert exact.absrel < 1e-9 and exact.delta1 == 1.0
