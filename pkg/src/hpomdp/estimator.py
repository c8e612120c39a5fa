"""scikit-learn style wrapper around the mixture learner.

``fit`` learns the patterns, ``transform`` gives each trajectory's posterior
pattern membership, ``predict`` its most likely pattern and ``score`` the
total log-likelihood. ``n_patterns=1`` is the single-pattern baseline.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .domain import ConceptGraph
from .evaluation import next_step_predictions
from .inference import component_log_likelihoods
from .learning import EMConfig, em_fit
from .validation import check_trajectories


class HPOMDPEstimator(BaseEstimator):
    def __init__(self, n_patterns: int = 3, max_iter: int = 200, tol: float = 1e-4, n_init: int = 5,
                 random_state: int = 0, membership_rule: str = "derived",
                 initial_distribution_rule: str = "weighted", floor_probability: float = 1e-6,
                 state_mode: str = "filtered", n_jobs: int = 1, graph: ConceptGraph = None,
                 questions=None):
        self.n_patterns = n_patterns
        self.max_iter = max_iter
        self.tol = tol
        self.n_init = n_init
        self.random_state = random_state
        self.membership_rule = membership_rule
        self.initial_distribution_rule = initial_distribution_rule
        self.floor_probability = floor_probability
        self.state_mode = state_mode
        self.n_jobs = n_jobs
        self.graph = graph
        self.questions = questions

    def _config(self) -> EMConfig:
        return EMConfig(k=self.n_patterns, max_iterations=self.max_iter,
                        convergence_threshold=self.tol, restarts=self.n_init,
                        seed=self.random_state, membership_rule=self.membership_rule,
                        initial_distribution_rule=self.initial_distribution_rule,
                        floor_probability=self.floor_probability, state_mode=self.state_mode,
                        n_jobs=self.n_jobs)

    def _dataset(self, X):
        graph, questions = self.graph, self.questions
        if hasattr(self, "model_"):
            graph, questions = self.model_.graph, self.model_.questions
        return check_trajectories(X, graph, questions)

    def fit(self, X, y=None):
        dataset = check_trajectories(X, self.graph, self.questions)
        result = em_fit(dataset, self._config())
        self.model_ = result.model
        self.membership_ = result.membership
        self.log_likelihood_trace_ = np.asarray(result.log_likelihood_trace)
        self.n_iter_ = result.iterations
        self.converged_ = result.converged
        self.fit_warnings_ = list(result.warnings)
        return self

    def _joint(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        dataset = self._dataset(X)
        prior = self.model_.pattern_prior
        with np.errstate(divide="ignore"):
            return np.log(prior / prior.sum())[None, :] + component_log_likelihoods(
                self.model_, dataset.trajectories)

    def transform(self, X) -> np.ndarray:
        """(n, k) posterior pattern memberships."""
        joint = self._joint(X)
        return np.exp(joint - logsumexp(joint, axis=1, keepdims=True))

    def predict(self, X) -> np.ndarray:
        return self.transform(X).argmax(axis=1)

    def score(self, X, y=None) -> float:
        return float(logsumexp(self._joint(X), axis=1).sum())

    def predict_next(self, X, include_first: bool = True) -> list:
        """Per-trajectory arrays of P(correct) for each answered question,
        each computed from the answers that precede it."""
        check_is_fitted(self, "model_")
        dataset = self._dataset(X)
        return [np.array([r.predicted for r in next_step_predictions(self.model_, [tr], include_first)])
                for tr in dataset.trajectories]
