import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logsumexp

from hpomdp.belief import Belief, fold_trajectory, init_belief, predict_response, update_belief
from hpomdp.domain import ObservationFunction, PatternComponent, Trajectory
from hpomdp.exceptions import ImpossibleEvidenceError
from hpomdp.inference import component_log_likelihoods

from conftest import chain2, random_model, random_trajectory, toy1


def test_toy1_update_and_prediction():
    model = toy1()
    b = init_belief(model)
    assert abs(predict_response(model, b, "q") - 0.48) < 1e-12
    after = update_belief(model, b, "q", 1)
    assert abs(after.bs[0, 1] - 0.825) < 1e-12
    wrong = update_belief(model, b, "q", 0)
    assert abs(wrong.bs[0, 1] - 0.184 / 0.52) < 1e-12


def test_initial_pattern_belief():
    w = np.array([[0.9, 0.1], [0.5, 0.5]])
    np.testing.assert_allclose(init_belief(toy1(k=2, membership=w)).bm, [0.7, 0.3], atol=1e-12)
    assert init_belief(toy1(k=2)).bm.tolist() == [0.5, 0.5]
    b = init_belief(toy1())
    assert b.bm.tolist() == [1.0] and b.bs[0].tolist() == [0.6, 0.4]


def test_transitions_do_not_move_pattern_belief_when_state_beliefs_agree():
    model = toy1(k=2, membership_summary=[0.3, 0.7])
    other = PatternComponent.from_learn_probabilities(model.space, [0.6, 0.4], [0.9])
    model = model.replace(components=(model.components[0], other))
    b = update_belief(model, init_belief(model), "q", 1)
    np.testing.assert_allclose(b.bm, [0.3, 0.7], atol=1e-12)


def test_uninformative_observation():
    model = toy1(k=2, membership_summary=[0.4, 0.6]).replace(observation=ObservationFunction([0.5], [0.5]))
    other = PatternComponent.from_learn_probabilities(model.space, [0.9, 0.1], [0.1])
    model = model.replace(components=(model.components[0], other))
    prior = init_belief(model)
    b = update_belief(model, prior, "q", 0)
    np.testing.assert_allclose(b.bm, prior.bm, atol=1e-12)
    expected = np.stack([prior.bs[j] @ model.components[j].transition[0] for j in range(2)])
    np.testing.assert_allclose(b.bs, expected, atol=1e-12)


def test_impossible_evidence_raises():
    model = toy1().replace(observation=ObservationFunction([0.0], [1.0]))
    b = Belief([1.0], [[0.0, 1.0]])
    with pytest.raises(ImpossibleEvidenceError):
        update_belief(model, b, "q", 0)


def test_single_pattern_matches_standard_pomdp_update(rng):
    model = random_model(rng, n_concepts=2, mode="full", questions_per_concept=2)
    b = init_belief(model)
    for a, o in random_trajectory(rng, model, 6).steps:
        i = model.action(a)
        lik = model.p_correct[i] if o else 1 - model.p_correct[i]
        expected = (b.bs[0] * lik) @ model.components[0].transition[model.concept_of[i]]
        expected /= expected.sum()
        b = update_belief(model, b, a, o)
        np.testing.assert_allclose(b.bs[0], expected, atol=1e-12)


def test_degenerate_belief_predicts_fluency():
    model = chain2()
    b = Belief([1.0], [[0.0, 0.0, 1.0]])
    assert predict_response(model, b, "qb") == 0.9


def test_prediction_uses_only_weighted_patterns():
    model = toy1(k=2)
    b = Belief([1.0, 0.0], [[1.0, 0.0], [0.0, 1.0]])
    assert predict_response(model, b, "q") == pytest.approx(0.2, abs=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_filtering_consistency(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, n_concepts=2, k=3, questions_per_concept=2)
    tr = random_trajectory(rng, model, int(rng.integers(1, 15)))
    bm = fold_trajectory(model, tr).bm
    joint = np.log(model.pattern_prior) + component_log_likelihoods(model, [tr])[0]
    expected = joint - logsumexp(joint)
    assert np.abs(np.log(bm) - expected).max() < 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12))
def test_updates_preserve_normalisation(seed, length):
    rng = np.random.default_rng(seed)
    model = random_model(rng, n_concepts=2, k=2)
    b = init_belief(model)
    for a, o in random_trajectory(rng, model, length).steps:
        b = update_belief(model, b, a, o)
        assert abs(b.bm.sum() - 1) < 1e-12
        np.testing.assert_allclose(b.bs.sum(axis=1), 1.0, atol=1e-12)
        assert (b.bm >= 0).all() and (b.bs >= 0).all()


def test_fold_trajectory_concept_mastery_shape():
    model = chain2()
    b = fold_trajectory(model, Trajectory("s", (("qa", 1), ("qb", 1))))
    assert b.concept_mastery(model).shape == (2,)
