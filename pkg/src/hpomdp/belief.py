"""Hierarchical belief tracking over (pattern, knowledge state)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import HPOMDPModel
from .exceptions import ImpossibleEvidenceError


@dataclass(frozen=True, eq=False)
class Belief:
    """Pattern belief ``bm`` (k,) and per-pattern state belief ``bs`` (k, S)."""

    bm: np.ndarray
    bs: np.ndarray

    def __post_init__(self):
        bm = np.array(self.bm, dtype=float)
        bs = np.array(self.bs, dtype=float)
        bm.flags.writeable = False
        bs.flags.writeable = False
        object.__setattr__(self, "bm", bm)
        object.__setattr__(self, "bs", bs)

    def state_marginal(self) -> np.ndarray:
        """P(s) with the pattern summed out."""
        return self.bm @ self.bs

    def concept_mastery(self, model: HPOMDPModel) -> np.ndarray:
        return self.state_marginal() @ model.space.mastered


def init_belief(model: HPOMDPModel) -> Belief:
    """Population-average prior: column mean of the memberships, and D per pattern."""
    bm = model.pattern_prior
    bm = bm / bm.sum()
    bs = np.stack([np.asarray(c.initial, dtype=float) for c in model.components])
    return Belief(bm, bs)


def _obs_column(model: HPOMDPModel, a: int, observation: int) -> np.ndarray:
    pc = model.p_correct[a]
    return pc if observation else 1.0 - pc


def update_belief(model: HPOMDPModel, belief: Belief, action, observation) -> Belief:
    """Fold one answered question into the belief.

    The pattern belief is reweighted by each pattern's probability of the
    observation under its pre-transition state belief; each state belief is
    then conditioned on the observation and pushed through its own
    transition for the question's concept.
    """
    a = model.action(action)
    c = model.concept_of[a]
    lik = _obs_column(model, a, int(observation))
    weighted = belief.bs * lik[None, :]                  # (k, S)
    per_pattern = weighted.sum(axis=1)
    evidence = belief.bm @ per_pattern
    if not evidence > 0:
        raise ImpossibleEvidenceError(
            f"observation {int(observation)} on question {action!r} is impossible under every pattern")
    bm = belief.bm * per_pattern / evidence

    trans = np.stack([comp.transition[c] for comp in model.components])  # (k, S, S)
    moved = np.einsum("ks,kst->kt", weighted, trans)
    norm = moved.sum(axis=1, keepdims=True)
    # a pattern that cannot explain the observation keeps its propagated prior;
    # its pattern weight is zero so the choice is immaterial
    prior_moved = np.einsum("ks,kst->kt", belief.bs, trans)
    bs = np.where(norm > 0, moved / np.where(norm > 0, norm, 1.0), prior_moved)
    return Belief(bm, bs)


def predict_response(model: HPOMDPModel, belief: Belief, action) -> float:
    """P(correct) for ``action`` under the mixture belief."""
    a = model.action(action)
    p = float(belief.bm @ (belief.bs @ model.p_correct[a]))
    return min(max(p, 0.0), 1.0)


def fold_trajectory(model: HPOMDPModel, trajectory, belief: Belief = None) -> Belief:
    belief = belief or init_belief(model)
    for a, o in trajectory.steps:
        belief = update_belief(model, belief, a, o)
    return belief
