import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hpomdp.domain import Dataset, ObservationFunction, PatternComponent, Trajectory
from hpomdp.evaluation import (PredictionRecord, assign_folds, compute_metrics, cross_validate,
                               format_metric_table, next_step_predictions, pairwise_auc, rank_auc)
from hpomdp.exceptions import ContractError
from hpomdp.learning import EMConfig
from hpomdp.simulation import sample_dataset

from conftest import chain2, random_model, toy1


def _records(pred, actual):
    return [PredictionRecord("s", i + 1, p, a) for i, (p, a) in enumerate(zip(pred, actual))]


def test_toy1_second_step_prediction():
    recs = next_step_predictions(toy1(), [Trajectory("s", (("q", 1), ("q", 0)))])
    assert abs(recs[0].predicted - 0.48) < 1e-12
    assert abs(recs[1].predicted - 0.7775) < 1e-12
    assert [r.step for r in next_step_predictions(toy1(), [Trajectory("s", (("q", 1), ("q", 0)))],
                                                  include_first=False)] == [2]


def test_pairwise_auc_hand_value():
    m = compute_metrics(_records([0.8, 0.6, 0.7, 0.2], [1, 1, 0, 0]))
    assert abs(m.auc - 0.75) < 1e-12
    assert abs(pairwise_auc([0.8, 0.6], [0.7, 0.2]) - 0.75) < 1e-12


def test_acc_and_mae_hand_values():
    m = compute_metrics(_records([0.7, 0.4], [1, 1]))
    assert abs(m.acc - 0.5) < 1e-12 and abs(m.mae - 0.45) < 1e-12
    assert m.auc is None and m.positives == 2 and m.negatives == 0


def test_threshold_ties_predict_correct():
    assert compute_metrics(_records([0.5], [1])).acc == 1.0


def test_perfect_predictions():
    m = compute_metrics(_records([1.0, 0.0, 1.0], [1, 0, 1]))
    assert (m.acc, m.auc, m.mae, m.rmse) == (1.0, 1.0, 0.0, 0.0)


def test_verbatim_rmse_form():
    recs = _records([0.5, 0.5], [1, 0])
    assert abs(compute_metrics(recs).rmse - 0.5) < 1e-12
    assert abs(compute_metrics(recs, rmse_form="verbatim").rmse - math.sqrt(0.5) / 2) < 1e-12
    with pytest.raises(ContractError):
        compute_metrics(recs, rmse_form="x")
    with pytest.raises(ContractError):
        compute_metrics([])


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]), st.integers(0, 1)),
                min_size=2, max_size=200))
def test_rank_auc_equals_pairwise_and_metric_properties(pairs):
    scores = np.array([p for p, _ in pairs])
    labels = np.array([y for _, y in pairs])
    auc = rank_auc(scores, labels)
    if labels.all() or not labels.any():
        assert auc is None
    else:
        assert auc == pytest.approx(pairwise_auc(scores[labels == 1], scores[labels == 0]), abs=1e-12)
    recs = _records(scores, labels)
    m = compute_metrics(recs)
    assert m.rmse >= m.mae - 1e-12
    shuffled = compute_metrics(list(reversed(recs)))
    assert shuffled.acc == m.acc and shuffled.auc == m.auc
    assert shuffled.mae == pytest.approx(m.mae) and shuffled.rmse == pytest.approx(m.rmse)


def test_degenerate_model_predicts_one():
    model = toy1().replace(observation=ObservationFunction([0.0], [1.0]),
                           components=(PatternComponent.from_learn_probabilities(toy1().space, [0, 1], [0.3]),))
    recs = next_step_predictions(model, [Trajectory("s", (("q", 1),) * 3)])
    assert [r.predicted for r in recs] == [1.0, 1.0, 1.0]


def test_mixture_of_equal_components_predicts_like_one(rng):
    one = random_model(rng, n_concepts=2)
    two = one.replace(components=one.components * 2, membership_summary=[0.3, 0.7])
    ds, _ = sample_dataset(one, 5, 6, seed=1)
    a = next_step_predictions(one, ds.trajectories)
    b = next_step_predictions(two, ds.trajectories)
    np.testing.assert_allclose([r.predicted for r in a], [r.predicted for r in b], atol=1e-12)


def test_unknown_questions_are_skipped(caplog):
    recs = next_step_predictions(toy1(), [Trajectory("s", (("q", 1), ("zz", 0), ("q", 1)))])
    assert [r.step for r in recs] == [1, 3]
    assert "zz" in caplog.text


def test_fold_assignment_properties():
    ids = [f"s{i}" for i in range(23)]
    a = assign_folds(ids, 5, seed=1)
    assert a == assign_folds(list(reversed(ids)), 5, seed=1)
    sizes = np.bincount(list(a.values()))
    assert sizes.max() - sizes.min() <= 1
    loo = assign_folds(ids, len(ids), seed=0)
    assert sorted(loo.values()) == list(range(len(ids)))
    with pytest.raises(ContractError):
        assign_folds(ids[:3], 5)


def test_cross_validate_small_run():
    ds, _ = sample_dataset(chain2(), 24, 6, seed=2)
    rep = cross_validate(ds, folds=3, config=EMConfig(k=2, restarts=1, max_iterations=10), seed=0)
    assert len(rep.hpomdp) == len(rep.pomdp) == 3
    assert sum(r.n for r in rep.hpomdp) == 24 * 6
    table = format_metric_table({"H": rep.hpomdp_mean, "P": rep.pomdp_mean})
    assert table.splitlines()[0] == "metric\tH\tP"
    with pytest.raises(ContractError):
        cross_validate(ds.subset(range(2)), folds=3)
