"""Simulated students: cohort roll-outs under a question policy, cohort
metrics, and synthetic answer logs.

Every student gets two independent random streams derived from
``(seed, student index)``, one for the ground-truth dynamics and one for the
policy, so results do not depend on scheduling or on how many draws the
policy consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .belief import init_belief, update_belief
from .domain import ConceptGraph, Dataset, HPOMDPModel, Trajectory
from .exceptions import ContractError
from .planning import PlannerConfig, best_action


def student_streams(seed: int, index: int):
    truth, policy = np.random.SeedSequence([int(seed), int(index)]).spawn(2)
    return np.random.default_rng(truth), np.random.default_rng(policy)


class PlannerPolicy:
    """Expectimax policy on its own model's belief.

    The belief depends only on the answer history, so decisions are memoised
    per history; a cohort of any size needs at most ``2**horizon`` plans.
    """

    def __init__(self, model: HPOMDPModel, config: PlannerConfig = None, label: str = "planner"):
        self.model = model
        self.config = config or PlannerConfig()
        self.label = label
        self._beliefs = {(): init_belief(model)}
        self._actions = {}

    def belief(self, history: tuple):
        if history not in self._beliefs:
            parent = self.belief(history[:-1])
            a, o = history[-1]
            self._beliefs[history] = update_belief(self.model, parent, a, o)
        return self._beliefs[history]

    def select(self, history: tuple, horizon_left: int, rng=None) -> str:
        key = (history, horizon_left)
        if key not in self._actions:
            cfg = replace(self.config, horizon=horizon_left)
            self._actions[key] = best_action(self.model, self.belief(history), cfg)
        return self._actions[key]


class RandomPolicy:
    """Uniformly random question from a catalog."""

    def __init__(self, question_ids, label: str = "random"):
        self.question_ids = tuple(question_ids)
        self.label = label

    def select(self, history, horizon_left, rng) -> str:
        return self.question_ids[int(rng.integers(len(self.question_ids)))]


class FixedPolicy:
    """Always asks the same question."""

    def __init__(self, question_id, label: str = None):
        self.question_id = str(question_id)
        self.label = label or f"always-{question_id}"

    def select(self, history, horizon_left, rng=None) -> str:
        return self.question_id


@dataclass
class CohortResult:
    final_state_distribution: dict
    per_student_mastered: list
    episodes: int
    policy_label: str
    state_counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "policy": self.policy_label,
            "episodes": self.episodes,
            "state_counts": {"".join(map(str, s)): n for s, n in sorted(self.state_counts.items())},
            "per_student_mastered": list(self.per_student_mastered),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CohortResult":
        counts = {tuple(int(b) for b in key): int(n) for key, n in doc["state_counts"].items()}
        episodes = int(doc["episodes"])
        dist = {s: n / episodes for s, n in counts.items()}
        return cls(dist, [int(x) for x in doc["per_student_mastered"]], episodes, doc["policy"], counts)


class _Sampler:
    def __init__(self, model: HPOMDPModel):
        self.model = model
        self.prior = np.cumsum(model.pattern_prior / model.pattern_prior.sum())
        self.initial = np.stack([np.cumsum(c.initial) for c in model.components])
        self.trans = np.stack([np.cumsum(c.transition, axis=2) for c in model.components])
        self.p_correct = model.p_correct

    @staticmethod
    def _draw(cdf, u):
        return min(int(np.searchsorted(cdf, u * cdf[-1], side="right")), len(cdf) - 1)

    def start(self, rng):
        m = self._draw(self.prior, rng.random())
        return m, self._draw(self.initial[m], rng.random())

    def step(self, rng, m, s, a):
        o = int(rng.random() < self.p_correct[a, s])
        c = self.model.concept_of[a]
        return o, self._draw(self.trans[m, c, s], rng.random())


def simulate_cohort(truth_model: HPOMDPModel, policy, horizon: int, n_students: int,
                    seed: int = 0) -> CohortResult:
    """Run ``n_students`` tutoring episodes of ``horizon`` questions each.

    The truth model samples each student's pattern, starting state, answers
    and transitions; the policy only sees the question/answer history.
    """
    if horizon < 1 or n_students < 1:
        raise ContractError("horizon and n_students must be >= 1")
    sampler = _Sampler(truth_model)
    states = truth_model.states
    counts = {}
    mastered = []
    for i in range(n_students):
        truth_rng, policy_rng = student_streams(seed, i)
        m, s = sampler.start(truth_rng)
        history = ()
        for t in range(horizon):
            action = policy.select(history, horizon - t, policy_rng)
            a = truth_model.action(action)
            o, s = sampler.step(truth_rng, m, s, a)
            history = history + ((action, o),)
        final = states[s]
        counts[final] = counts.get(final, 0) + 1
        mastered.append(int(sum(final)))
    dist = {st: n / n_students for st, n in counts.items()}
    return CohortResult(dist, mastered, n_students, getattr(policy, "label", "policy"), counts)


def strategy_metrics(result: CohortResult, graph: ConceptGraph) -> dict:
    """Per-concept proficiency, expected mastered count and its variance."""
    n = graph.n_concepts
    pro = np.zeros(n)
    pro_sum = 0.0
    for state, p in result.final_state_distribution.items():
        if len(state) != n:
            raise ContractError(f"state {state} does not match a graph of {n} concepts")
        pro += p * np.asarray(state, dtype=float)
        pro_sum += p * sum(state)
    var = sum(p * (pro_sum - sum(state)) ** 2 for state, p in result.final_state_distribution.items())
    return {"pro": dict(zip(graph.concepts, pro.tolist())), "pro_sum": pro_sum, "var": var}


def two_sample_t(counts_a, counts_b) -> float:
    """Pooled-variance two-sample t statistic (df = n_a + n_b - 2).

    Zero pooled variance gives 0 for equal means and a signed infinity
    otherwise.
    """
    a = np.asarray(counts_a, dtype=float)
    b = np.asarray(counts_b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        raise ContractError("both samples must be non-empty")
    diff = a.mean() - b.mean()
    df = len(a) + len(b) - 2
    ss = ((a - a.mean()) ** 2).sum() + ((b - b.mean()) ** 2).sum()
    pooled = ss / df if df > 0 else 0.0
    se = math.sqrt(pooled * (1.0 / len(a) + 1.0 / len(b)))
    if se == 0.0:
        if diff == 0.0:
            return 0.0
        return math.copysign(math.inf, diff)
    return float(diff / se)


def sample_dataset(model: HPOMDPModel, n_students: int, length: int, seed: int = 0,
                   policy=None) -> tuple:
    """Draw synthetic answer logs from ``model``.

    Returns ``(dataset, patterns)`` where ``patterns[i]`` is the generating
    pattern of trajectory ``i``. Questions are uniformly random by default.
    """
    policy = policy or RandomPolicy([q.id for q in model.questions])
    sampler = _Sampler(model)
    trajectories, patterns = [], []
    for i in range(n_students):
        truth_rng, policy_rng = student_streams(seed, i)
        m, s = sampler.start(truth_rng)
        history = ()
        for t in range(length):
            action = policy.select(history, length - t, policy_rng)
            o, s = sampler.step(truth_rng, m, s, model.action(action))
            history = history + ((action, o),)
        trajectories.append(Trajectory(f"s{i:05d}", history))
        patterns.append(m)
    return Dataset(model.graph, model.questions, tuple(trajectories)), np.array(patterns)
