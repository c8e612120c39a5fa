"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

from collections.abc import Iterable

from .domain import ConceptGraph, Dataset, Trajectory
from .exceptions import ContractError


def check_trajectories(X, graph: ConceptGraph = None, questions=None) -> Dataset:
    """Coerce ``X`` into a :class:`Dataset`.

    ``X`` may be a Dataset, or an iterable of :class:`Trajectory` objects or
    ``(student, steps)`` pairs, in which case ``graph`` and ``questions``
    supply the catalog. Every action must be a catalog question.
    """
    if isinstance(X, Dataset):
        dataset = X
    else:
        if graph is None or questions is None:
            raise ContractError("graph and questions are required unless X is a Dataset")
        if not isinstance(X, Iterable) or isinstance(X, (str, bytes)):
            raise ContractError(f"expected trajectories, got {type(X).__name__}")
        trajectories = []
        for item in X:
            if isinstance(item, Trajectory):
                trajectories.append(item)
            else:
                try:
                    student, steps = item
                except (TypeError, ValueError):
                    raise ContractError("each trajectory must be a Trajectory or (student, steps)") from None
                trajectories.append(Trajectory(student, tuple(steps)))
        dataset = Dataset(graph, tuple(questions), tuple(trajectories))
    if len(dataset) == 0:
        raise ContractError("no trajectories")
    known = {q.id for q in dataset.questions}
    concepts = set(dataset.graph.concepts)
    for q in dataset.questions:
        if q.concept not in concepts:
            raise ContractError(f"question {q.id!r} refers to unknown concept {q.concept!r}")
    for tr in dataset.trajectories:
        unknown = sorted(set(tr.actions) - known)
        if unknown:
            raise ContractError(f"trajectory {tr.student!r} uses unknown questions {unknown}")
    return dataset
