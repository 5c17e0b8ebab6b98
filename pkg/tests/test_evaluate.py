import itertools

import numpy as np
import pytest

from composcene.errors import NumericError, ParameterError
from composcene.evaluate import (
    hungarian_match,
    multi_label_accuracy,
    pair_mse,
    perception_metrics,
)


def brute_force_cost(cost):
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    k = min(n, m)
    best = np.inf
    rows = range(n)
    for chosen in itertools.permutations(range(m), k):
        for rsub in itertools.combinations(rows, k):
            total = sum(cost[r, c] for r, c in zip(rsub, chosen))
            best = min(best, total)
    return best


def test_zero_diagonal_identity():
    cost = np.full((3, 3), 100.0)
    np.fill_diagonal(cost, 0.0)
    a = hungarian_match(cost)
    assert a.pairs == ((0, 0), (1, 1), (2, 2))
    assert a.total_cost == 0.0


def test_two_by_two_example():
    a = hungarian_match([[1.0, 2.0], [3.0, 0.0]])
    assert a.pairs == ((0, 0), (1, 1))
    assert a.total_cost == 1.0


def test_random_matrices_match_brute_force():
    gen = np.random.default_rng(0)
    for _ in range(60):
        n = int(gen.integers(1, 5))
        m = int(gen.integers(1, 5))
        cost = gen.uniform(0, 10, (n, m))
        a = hungarian_match(cost)
        assert a.total_cost == pytest.approx(brute_force_cost(cost), abs=1e-12)
        assert len(a.pairs) == min(n, m)
        assert len({r for r, _ in a.pairs}) == len(a.pairs)
        assert len({c for _, c in a.pairs}) == len(a.pairs)


def test_rectangular_unmatched_listed():
    a = hungarian_match(np.zeros((2, 4)))
    assert len(a.pairs) == 2
    assert len(a.unmatched_true) == 2
    b = hungarian_match(np.zeros((4, 2)))
    assert len(b.unmatched_pred) == 2


def test_matching_errors():
    with pytest.raises(NumericError):
        hungarian_match([[np.inf, 1.0], [1.0, 0.0]])
    with pytest.raises(ParameterError):
        hungarian_match(np.zeros((0, 3)))


def test_cost_invariant_to_row_permutation():
    gen = np.random.default_rng(1)
    cost = gen.uniform(0, 5, (4, 4))
    perm = gen.permutation(4)
    assert hungarian_match(cost).total_cost == pytest.approx(
        hungarian_match(cost[perm]).total_cost, abs=1e-12)


def test_perfect_predictions():
    truth = [np.array([[0.2, 0.3], [0.7, 0.7]])]
    m = perception_metrics(truth, truth)
    assert m.perception_rate == 1.0
    assert m.estimation_error == 0.0


def test_single_offset_prediction():
    truth = [np.array([[0.5, 0.5]])]
    pred = [np.array([[0.6, 0.5]])]
    m = perception_metrics(pred, truth)
    assert m.perception_rate == 0.0
    assert m.estimation_error == pytest.approx(0.005)


def test_half_discovered():
    truth = [np.array([[0.2, 0.2], [0.8, 0.8]])]
    pred = [np.array([[0.2, 0.2], [0.6, 0.6]])]
    m = perception_metrics(pred, truth)
    assert m.perception_rate == 0.5


def test_threshold_is_strict():
    truth = [np.array([[0.5, 0.5]])]
    pred = [np.array([[0.6, 0.5]])]
    mse = pair_mse(pred[0][0], truth[0][0])
    m = perception_metrics(pred, truth, threshold=mse)
    assert m.perception_rate == 0.0
    m2 = perception_metrics(pred, truth, threshold=np.nextafter(mse, 1.0))
    assert m2.perception_rate == 1.0


def test_unmatched_truth_corner_penalty():
    truth = [np.array([[0.5, 0.5], [0.2, 0.2]])]
    pred = [np.array([[0.5, 0.5]])]
    m = perception_metrics(pred, truth)
    # matched object contributes 0, unmatched one the corner-sentinel MSE
    want = (0.0 + pair_mse([0.2, 0.2], [1.0, 1.0])) / 2
    assert m.estimation_error == pytest.approx(want)
    m2 = perception_metrics(pred, truth, unmatched_penalty=0.125)
    assert m2.estimation_error == pytest.approx(0.0625)


def test_metrics_invariant_to_prediction_order():
    gen = np.random.default_rng(2)
    truth = [gen.uniform(0, 1, (3, 2)) for _ in range(4)]
    pred = [t + gen.normal(0, 0.02, t.shape) for t in truth]
    m1 = perception_metrics(pred, truth)
    m2 = perception_metrics([p[::-1] for p in pred], truth)
    assert m1.perception_rate == m2.perception_rate
    assert m1.estimation_error == pytest.approx(m2.estimation_error, rel=1e-12)


def test_metrics_validation():
    with pytest.raises(ParameterError):
        perception_metrics([], [])
    with pytest.raises(ParameterError):
        perception_metrics([np.zeros((1, 2))], [])


def test_csv_output(tmp_path):
    truth = [np.array([[0.5, 0.5]])]
    m = perception_metrics(truth, truth)
    path = tmp_path / "metrics.csv"
    m.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("scene_id,")
    assert lines[-1].startswith("summary,")


def test_multi_label_accuracy_examples():
    bits = [[1, 0, 1], [0, 0, 0]]
    assert multi_label_accuracy(bits, bits) == 1.0
    wrong = [[1, 0, 0], [0, 0, 1]]
    assert multi_label_accuracy(wrong, bits) == 0.0
    preds = [[1, 1]] * 70 + [[1, 0]] * 30
    truth = [[1, 1]] * 100
    assert multi_label_accuracy(preds, truth) == pytest.approx(0.70)
    with pytest.raises(ParameterError):
        multi_label_accuracy([[1]], [[1], [0]])
    with pytest.raises(ParameterError):
        multi_label_accuracy([[1, 0]], [[1]])
