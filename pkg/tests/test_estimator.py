import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from hpomdp.estimator import HPOMDPEstimator
from hpomdp.exceptions import ContractError
from hpomdp.learning import EMConfig, em_fit
from hpomdp.simulation import sample_dataset
from hpomdp.validation import check_trajectories

from conftest import chain2, two_pattern_truth


def test_params_round_trip_and_clone():
    est = HPOMDPEstimator(n_patterns=2, n_init=1)
    assert est.get_params()["n_patterns"] == 2
    other = clone(est).set_params(max_iter=7)
    assert other.max_iter == 7 and est.max_iter == 200


def test_unfitted_use_raises():
    ds, _ = sample_dataset(chain2(), 3, 3)
    with pytest.raises(NotFittedError):
        HPOMDPEstimator().predict(ds)


def test_fit_transform_predict_score():
    ds, patterns = sample_dataset(two_pattern_truth(), 200, 20, seed=1)
    est = HPOMDPEstimator(n_patterns=2, n_init=2, random_state=1).fit(ds)
    w = est.transform(ds)
    assert w.shape == (200, 2)
    np.testing.assert_allclose(w.sum(axis=1), 1.0)
    labels = est.predict(ds)
    agree = (labels == patterns).mean()
    assert max(agree, 1 - agree) > 0.8
    # same posterior as the last EM membership, up to the convergence threshold
    np.testing.assert_allclose(w, est.membership_, atol=1e-3)
    assert np.isclose(est.score(ds), est.log_likelihood_trace_[-1])
    assert all(len(p) == 20 for p in est.predict_next(ds.subset(range(3))))


def test_single_pattern_equals_baseline():
    ds, _ = sample_dataset(chain2(), 30, 5, seed=2)
    est = HPOMDPEstimator(n_patterns=1, n_init=2, random_state=4).fit(ds)
    ref = em_fit(ds, EMConfig(k=1, restarts=2, seed=4))
    assert est.log_likelihood_trace_[-1] == ref.log_likelihood


def test_accepts_plain_trajectories_with_catalog():
    model = chain2()
    ds, _ = sample_dataset(model, 10, 4, seed=0)
    pairs = [(t.student, t.steps) for t in ds.trajectories]
    est = HPOMDPEstimator(n_patterns=1, n_init=1, graph=model.graph, questions=model.questions).fit(pairs)
    assert est.predict(pairs).shape == (10,)
    with pytest.raises(ContractError):
        check_trajectories(pairs)
    with pytest.raises(ContractError):
        check_trajectories([("s", [("zz", 1)])], model.graph, model.questions)
    with pytest.raises(ContractError):
        check_trajectories([], model.graph, model.questions)
