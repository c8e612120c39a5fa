import numpy as np
import pytest

from hpomdp.domain import (ConceptGraph, Dataset, HPOMDPModel, ObservationFunction, PatternComponent,
                           StateSpace, Trajectory, make_questions)


def toy1(learn: float = 0.3, k: int = 1, **kwargs) -> HPOMDPModel:
    """One concept, one question: D(unmastered) = 0.6, guess 0.2, fluency 0.9."""
    graph = ConceptGraph(["c"])
    space = StateSpace(graph)
    comp = PatternComponent.from_learn_probabilities(space, [0.6, 0.4], [learn])
    return HPOMDPModel(graph, make_questions([("q", "c")]), (comp,) * k,
                       ObservationFunction([0.2], [0.9]), **kwargs)


def chain2(learn=(0.5, 0.4), initial=None, guess=0.2, fluency=0.9, mode="filtered", k=1) -> HPOMDPModel:
    """Two concepts A -> B with one question each."""
    graph = ConceptGraph(["A", "B"], {("A", "B")})
    space = StateSpace(graph, mode)
    if initial is None:
        initial = np.zeros(len(space))
        initial[0] = 1.0
    comp = PatternComponent.from_learn_probabilities(space, initial, learn)
    return HPOMDPModel(graph, make_questions([("qa", "A"), ("qb", "B")]), (comp,) * k,
                       ObservationFunction([guess, guess], [fluency, fluency]), state_mode=mode)


def random_model(rng, n_concepts=2, k=1, mode="filtered", edges=None, questions_per_concept=1,
                 membership_summary=None) -> HPOMDPModel:
    names = [f"c{i}" for i in range(n_concepts)]
    if edges is None:
        edges = {(names[i], names[i + 1]) for i in range(n_concepts - 1) if rng.random() < 0.5}
    graph = ConceptGraph(names, edges)
    space = StateSpace(graph, mode)
    qs = make_questions([(f"{c}_{j}", c) for c in names for j in range(questions_per_concept)])
    comps = [PatternComponent.from_learn_probabilities(space, rng.dirichlet(np.ones(len(space))),
                                                       rng.uniform(0.05, 0.95, n_concepts))
             for _ in range(k)]
    guess = rng.uniform(0.05, 0.45, len(qs))
    fluency = rng.uniform(0.55, 0.95, len(qs))
    if membership_summary is None and k > 1:
        membership_summary = rng.dirichlet(np.ones(k))
    return HPOMDPModel(graph, qs, comps, ObservationFunction(guess, fluency), state_mode=mode,
                       membership_summary=membership_summary)


def random_trajectory(rng, model, length, name="s"):
    ids = [q.id for q in model.questions]
    return Trajectory(name, tuple((ids[rng.integers(len(ids))], int(rng.integers(2))) for _ in range(length)))


def two_pattern_truth(learn=(0.6, 0.1)) -> HPOMDPModel:
    """Generator for recovery checks: three independent concepts with two
    questions each; nearly every student starts with nothing mastered."""
    graph = ConceptGraph(["A", "B", "C"])
    space = StateSpace(graph)
    initial = np.full(len(space), 0.05 / (len(space) - 1))
    initial[0] = 0.95
    comps = [PatternComponent.from_learn_probabilities(space, initial, [p] * 3) for p in learn]
    qs = make_questions([(f"{c}{j}", c) for c in "ABC" for j in (1, 2)])
    return HPOMDPModel(graph, qs, comps, ObservationFunction([0.1] * 6, [0.95] * 6),
                       membership_summary=np.full(len(learn), 1.0 / len(learn)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
