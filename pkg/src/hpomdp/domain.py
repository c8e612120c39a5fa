"""Core vocabulary: concept graphs, knowledge-state spaces, question catalogs,
answer trajectories and the mixture-of-POMDPs model container.

All containers are frozen; numpy payloads are copied on construction and
marked read-only so models can be shared between threads and sessions.
"""

from __future__ import annotations

import graphlib
import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np

from .exceptions import CapacityError, ContractError, StructuralError

KnowledgeState = tuple  # tuple of 0/1 mastery bits, one per concept

STATE_MODES = ("full", "filtered")
ROW_TOL = 1e-9
MAX_CONCEPTS = 20


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ConceptGraph:
    """Knowledge concepts plus prerequisite edges ``(parent, child)``."""

    concepts: tuple
    prerequisites: frozenset = frozenset()

    def __post_init__(self):
        concepts = tuple(str(c) for c in self.concepts)
        edges = frozenset((str(p), str(c)) for p, c in self.prerequisites)
        object.__setattr__(self, "concepts", concepts)
        object.__setattr__(self, "prerequisites", edges)
        if len(concepts) == 0:
            raise StructuralError("concept graph has no concepts")
        if len(set(concepts)) != len(concepts):
            raise StructuralError("concept identifiers must be unique")
        known = set(concepts)
        for parent, child in edges:
            if parent not in known or child not in known:
                raise StructuralError(f"edge {parent}->{child} references an undeclared concept")
            if parent == child:
                raise StructuralError(f"self-loop on concept {parent}")
        sorter = graphlib.TopologicalSorter({c: set() for c in concepts})
        for parent, child in edges:
            sorter.add(child, parent)
        try:
            tuple(sorter.static_order())
        except graphlib.CycleError as exc:
            raise StructuralError(f"prerequisite graph has a cycle: {exc.args[1]}") from None

    @property
    def n_concepts(self) -> int:
        return len(self.concepts)

    def index(self, concept) -> int:
        try:
            return self.concepts.index(str(concept))
        except ValueError:
            raise ContractError(f"unknown concept {concept!r}") from None

    def parents(self, concept) -> tuple:
        concept = str(concept)
        return tuple(sorted(p for p, c in self.prerequisites if c == concept))

    def children(self, concept) -> tuple:
        concept = str(concept)
        return tuple(sorted(c for p, c in self.prerequisites if p == concept))

    def edge_indices(self) -> list:
        return sorted((self.index(p), self.index(c)) for p, c in self.prerequisites)


@dataclass(frozen=True)
class Question:
    id: str
    concept: str

    def __post_init__(self):
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "concept", str(self.concept))


@dataclass(frozen=True)
class Trajectory:
    """One student's ordered ``(question id, observation)`` steps.

    Observations are 1 for a correct answer and 0 otherwise.
    """

    student: str
    steps: tuple

    def __post_init__(self):
        steps = tuple((str(a), int(o)) for a, o in self.steps)
        if not steps:
            raise ContractError(f"trajectory for student {self.student!r} is empty")
        for _, o in steps:
            if o not in (0, 1):
                raise ContractError(f"observation {o!r} is not 0/1")
        object.__setattr__(self, "student", str(self.student))
        object.__setattr__(self, "steps", steps)

    def __len__(self):
        return len(self.steps)

    @property
    def actions(self) -> tuple:
        return tuple(a for a, _ in self.steps)

    @property
    def observations(self) -> tuple:
        return tuple(o for _, o in self.steps)


def build_state_space(graph: ConceptGraph, mode: str = "filtered") -> list:
    """Enumerate knowledge states in lexicographic bit-vector order.

    ``full`` yields all ``2**K`` vectors; ``filtered`` keeps the downward-closed
    ones (every mastered concept has all of its prerequisites mastered).
    """
    if mode not in STATE_MODES:
        raise ContractError(f"unknown state-space mode {mode!r}")
    if not isinstance(graph, ConceptGraph):
        raise StructuralError("build_state_space needs a ConceptGraph")
    n = graph.n_concepts
    if n > MAX_CONCEPTS:
        raise CapacityError(f"{n} concepts exceeds the enumeration limit of {MAX_CONCEPTS}")
    edges = graph.edge_indices()
    states = []
    for bits in itertools.product((0, 1), repeat=n):
        if mode == "filtered" and any(bits[c] and not bits[p] for p, c in edges):
            continue
        states.append(bits)
    return states


class StateSpace:
    """Indexed state space with the lookup tables the algorithms need.

    Attributes
    ----------
    states : tuple of KnowledgeState
    mastered : ndarray (S, K) of bool
    flip : ndarray (K, S) of int
        Index of the state reached by mastering concept ``c`` from state ``s``,
        or -1 when ``c`` is already mastered or the result is infeasible.
    """

    def __init__(self, graph: ConceptGraph, mode: str = "filtered"):
        self.graph = graph
        self.mode = mode
        self.states = tuple(build_state_space(graph, mode))
        self._index = {s: i for i, s in enumerate(self.states)}
        self.mastered = _frozen_array(self.states, dtype=bool).reshape(len(self.states), graph.n_concepts)
        flip = np.full((graph.n_concepts, len(self.states)), -1, dtype=np.int64)
        for i, s in enumerate(self.states):
            for c in range(graph.n_concepts):
                if not s[c]:
                    target = s[:c] + (1,) + s[c + 1:]
                    flip[c, i] = self._index.get(target, -1)
        flip.flags.writeable = False
        self.flip = flip
        self.mastered_count = _frozen_array(self.mastered.sum(axis=1))

    def __len__(self):
        return len(self.states)

    def index(self, state) -> int:
        try:
            return self._index[tuple(int(b) for b in state)]
        except KeyError:
            raise ContractError(f"state {tuple(state)} is not in the {self.mode} state space") from None

    def transition_tables(self, learn: np.ndarray) -> np.ndarray:
        """Build ``T[c, s, s']`` from one learn-probability per concept."""
        n_states = len(self.states)
        table = np.zeros((self.graph.n_concepts, n_states, n_states))
        rows = np.arange(n_states)
        for c, p in enumerate(learn):
            feasible = self.flip[c] >= 0
            table[c, rows, rows] = np.where(feasible, 1.0 - p, 1.0)
            table[c, rows[feasible], self.flip[c][feasible]] = p
        return table


@dataclass(frozen=True, eq=False)
class PatternComponent:
    """One cognitive pattern: initial distribution and per-concept transitions.

    ``transition[c, s, s']`` is the probability of moving from ``s`` to ``s'``
    after answering any question on concept ``c``.
    """

    initial: np.ndarray
    transition: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "initial", _frozen_array(self.initial))
        object.__setattr__(self, "transition", _frozen_array(self.transition))

    @classmethod
    def from_learn_probabilities(cls, space: StateSpace, initial, learn) -> "PatternComponent":
        learn = np.asarray(learn, dtype=float)
        if learn.shape != (space.graph.n_concepts,):
            raise ContractError("need one learn probability per concept")
        return cls(initial=initial, transition=space.transition_tables(learn))

    def learn_probabilities(self, space: StateSpace) -> np.ndarray:
        """Read back the per-concept learn probability from the first feasible row."""
        out = np.empty(space.graph.n_concepts)
        for c in range(space.graph.n_concepts):
            s = int(np.flatnonzero(space.flip[c] >= 0)[0])
            out[c] = self.transition[c, s, space.flip[c, s]]
        return out


@dataclass(frozen=True, eq=False)
class ObservationFunction:
    """Shared P(correct | state, question).

    By default parameterised per question by ``guess`` (concept unmastered)
    and ``fluency`` (concept mastered). ``table`` of shape (Q, S) overrides
    both when given.
    """

    guess: np.ndarray
    fluency: np.ndarray
    table: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "guess", _frozen_array(self.guess))
        object.__setattr__(self, "fluency", _frozen_array(self.fluency))
        if self.table is not None:
            object.__setattr__(self, "table", _frozen_array(self.table))

    @property
    def full_table(self) -> bool:
        return self.table is not None

    def correct_matrix(self, space: StateSpace, concept_of: np.ndarray) -> np.ndarray:
        if self.table is not None:
            return np.asarray(self.table)
        mastered = space.mastered[:, concept_of].T  # (Q, S)
        return np.where(mastered, self.fluency[:, None], self.guess[:, None])


@dataclass(frozen=True, eq=False)
class RewardSpec:
    """Terminal reward per state; per-step reward is zero."""

    terminal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "terminal", _frozen_array(self.terminal))

    @classmethod
    def mastered_count(cls, space: StateSpace) -> "RewardSpec":
        return cls(space.mastered_count)


@dataclass(frozen=True, eq=False)
class HPOMDPModel:
    """k pattern components sharing states, questions, observations and reward.

    ``membership`` is the (l, k) matrix kept from fitting; ``membership_summary``
    holds just its column means (what a model file stores).
    """

    graph: ConceptGraph
    questions: tuple
    components: tuple
    observation: ObservationFunction
    reward: Optional[RewardSpec] = None
    state_mode: str = "filtered"
    discount: float = 1.0
    membership: Optional[np.ndarray] = None
    membership_summary: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "questions", tuple(self.questions))
        object.__setattr__(self, "components", tuple(self.components))
        if self.state_mode not in STATE_MODES:
            raise ContractError(f"unknown state-space mode {self.state_mode!r}")
        if not self.components:
            raise ContractError("model needs at least one pattern component")
        ids = [q.id for q in self.questions]
        if len(set(ids)) != len(ids):
            raise ContractError("question ids must be unique")
        for q in self.questions:
            if q.concept not in self.graph.concepts:
                raise ContractError(f"question {q.id!r} references unknown concept {q.concept!r}")
        if self.reward is None:
            object.__setattr__(self, "reward", RewardSpec.mastered_count(self.space))
        if self.membership is not None:
            object.__setattr__(self, "membership", _frozen_array(self.membership))
        if self.membership_summary is not None:
            object.__setattr__(self, "membership_summary", _frozen_array(self.membership_summary))

    @cached_property
    def space(self) -> StateSpace:
        return StateSpace(self.graph, self.state_mode)

    @property
    def states(self) -> tuple:
        return self.space.states

    @property
    def k(self) -> int:
        return len(self.components)

    @cached_property
    def question_index(self) -> dict:
        return {q.id: i for i, q in enumerate(self.questions)}

    @cached_property
    def concept_of(self) -> np.ndarray:
        return _frozen_array([self.graph.index(q.concept) for q in self.questions], dtype=np.int64)

    @cached_property
    def p_correct(self) -> np.ndarray:
        """P(correct | s, q) as a (Q, S) array."""
        return _frozen_array(self.observation.correct_matrix(self.space, self.concept_of))

    @property
    def pattern_prior(self) -> np.ndarray:
        if self.membership is not None and len(self.membership):
            return np.asarray(self.membership).mean(axis=0)
        if self.membership_summary is not None:
            return np.asarray(self.membership_summary, dtype=float)
        return np.full(self.k, 1.0 / self.k)

    def action(self, action_id) -> int:
        try:
            return self.question_index[str(action_id)]
        except KeyError:
            raise ContractError(f"unknown action {action_id!r}") from None

    def replace(self, **changes) -> "HPOMDPModel":
        fields = dict(
            graph=self.graph, questions=self.questions, components=self.components,
            observation=self.observation, reward=self.reward, state_mode=self.state_mode,
            discount=self.discount, membership=self.membership,
            membership_summary=self.membership_summary, metadata=dict(self.metadata),
        )
        if ("graph" in changes or "state_mode" in changes) and "reward" not in changes:
            fields["reward"] = None   # rebuilt for the new state space
        fields.update(changes)
        return HPOMDPModel(**fields)


@dataclass(frozen=True)
class Violation:
    invariant: str
    index: tuple
    residual: float

    def __str__(self):
        return f"{self.invariant} at {self.index}: residual {self.residual:.3g}"


def validate_model(model: HPOMDPModel, tol: float = ROW_TOL) -> list:
    """Check the structural and stochastic invariants of ``model``.

    Never raises; returns an empty list when everything holds.
    """
    out = []
    try:
        space = model.space
    except Exception as exc:  # diagnostics only
        return [Violation("state-space", (str(exc),), float("nan"))]
    n_states, n_concepts, n_q = len(space), model.graph.n_concepts, len(model.questions)

    for j, comp in enumerate(model.components):
        d = np.asarray(comp.initial)
        t = np.asarray(comp.transition)
        if d.shape != (n_states,) or t.shape != (n_concepts, n_states, n_states):
            out.append(Violation("shared-spaces", (j,), float("nan")))
            continue
        if (d < 0).any():
            out.append(Violation("nonnegative-initial", (j,), float(-d.min())))
        resid = abs(d.sum() - 1.0)
        if resid > tol:
            out.append(Violation("initial-distribution", (j,), float(resid)))
        if (t < 0).any():
            out.append(Violation("nonnegative-transition", (j,), float(-t.min())))
        sums = t.sum(axis=2)
        for c, s in zip(*np.nonzero(np.abs(sums - 1.0) > tol)):
            out.append(Violation("row-stochastic", (j, model.graph.concepts[c], space.states[s]),
                                 float(abs(sums[c, s] - 1.0))))
        allowed = np.zeros_like(t, dtype=bool)
        rows = np.arange(n_states)
        allowed[:, rows, rows] = True
        for c in range(n_concepts):
            ok = space.flip[c] >= 0
            allowed[c, rows[ok], space.flip[c][ok]] = True
        bad = np.where(allowed, 0.0, np.abs(t))
        for c, s in zip(*np.nonzero(bad.max(axis=2) > tol)):
            out.append(Violation("constraint-3", (j, model.graph.concepts[c], space.states[s]),
                                 float(bad[c, s].sum())))

    obs = model.observation
    if obs.table is not None:
        tab = np.asarray(obs.table)
        if tab.shape != (n_q, n_states):
            out.append(Violation("observation-shape", (), float("nan")))
        else:
            for q in np.flatnonzero((tab < 0).any(axis=1) | (tab > 1).any(axis=1)):
                out.append(Violation("observation-range", (model.questions[q].id,), float("nan")))
            for q, c in enumerate(model.concept_of):
                m = space.mastered[:, c]
                if m.all() or not m.any():
                    continue
                gap = tab[q, ~m].max() - tab[q, m].min()
                if gap >= 0:
                    out.append(Violation("constraint-1", (model.questions[q].id,), float(gap)))
    else:
        g, f = np.asarray(obs.guess), np.asarray(obs.fluency)
        if g.shape != (n_q,) or f.shape != (n_q,):
            out.append(Violation("observation-shape", (), float("nan")))
        else:
            for q in range(n_q):
                qid = model.questions[q].id
                if not (0 <= g[q] <= 1 and 0 <= f[q] <= 1):
                    out.append(Violation("observation-range", (qid,), float("nan")))
                if not f[q] > g[q]:
                    out.append(Violation("constraint-1", (qid,), float(g[q] - f[q])))

    reward = np.asarray(model.reward.terminal)
    if reward.shape != (n_states,):
        out.append(Violation("reward-shape", (), float("nan")))
    if not 0.0 <= model.discount <= 1.0:
        out.append(Violation("discount-range", (), float(model.discount)))

    if model.membership is not None:
        w = np.asarray(model.membership)
        if w.ndim != 2 or w.shape[1] != model.k:
            out.append(Violation("membership-shape", (), float("nan")))
        else:
            for i in np.flatnonzero(np.abs(w.sum(axis=1) - 1.0) > tol):
                out.append(Violation("membership-row", (int(i),), float(abs(w[i].sum() - 1.0))))
    return out


def make_questions(pairs: Iterable[Sequence]) -> tuple:
    return tuple(Question(qid, concept) for qid, concept in pairs)


@dataclass(frozen=True)
class Dataset:
    """Trajectories together with the catalog and graph they refer to."""

    graph: ConceptGraph
    questions: tuple
    trajectories: tuple

    def __post_init__(self):
        object.__setattr__(self, "questions", tuple(self.questions))
        object.__setattr__(self, "trajectories", tuple(self.trajectories))

    def __len__(self):
        return len(self.trajectories)

    def subset(self, indices) -> "Dataset":
        return Dataset(self.graph, self.questions, tuple(self.trajectories[i] for i in indices))
