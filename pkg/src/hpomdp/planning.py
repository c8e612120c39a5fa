"""Question selection by finite-horizon expectimax over hierarchical beliefs.

Rewards are terminal only: a leaf is worth the expected terminal reward under
its belief. ``exact`` mode expands the full remaining horizon; ``receding``
mode expands ``min(depth, horizon)`` levels and is meant to be re-run after
every answer.
"""

from __future__ import annotations

from dataclasses import dataclass


from .belief import Belief, predict_response, update_belief
from .domain import HPOMDPModel
from .exceptions import CapacityError, ContractError, ImpossibleEvidenceError

MODES = ("exact", "receding")
REDUCTIONS = ("per-concept", "full")
EXACT_LIMIT = 10 ** 7
TIE_TOL = 1e-12


@dataclass(frozen=True)
class PlannerConfig:
    """Planner settings.

    ``horizon`` is the number of questions still to be asked. In receding
    mode the search depth is ``min(depth, horizon)``.
    """

    horizon: int = 10
    discount: float = 1.0
    mode: str = "receding"
    depth: int = 3
    action_reduction: str = "per-concept"

    def __post_init__(self):
        if self.horizon < 1:
            raise ContractError("horizon must be >= 1")
        if self.depth < 1:
            raise ContractError("depth must be >= 1")
        if not 0.0 <= self.discount <= 1.0:
            raise ContractError("discount must lie in [0, 1]")
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}")
        if self.action_reduction not in REDUCTIONS:
            raise ContractError(f"action_reduction must be one of {REDUCTIONS}")

    @property
    def search_depth(self) -> int:
        return self.horizon if self.mode == "exact" else min(self.depth, self.horizon)


def candidate_actions(model: HPOMDPModel, reduction: str = "per-concept") -> list:
    """Catalog indices the planner searches over, in catalog order.

    ``per-concept`` keeps, for every concept, the question whose correct-answer
    probability differs most between mastered and unmastered states.
    """
    n_q = len(model.questions)
    if reduction == "full":
        return list(range(n_q))
    pc = model.p_correct
    mastered = model.space.mastered
    best = {}
    for q in range(n_q):
        c = int(model.concept_of[q])
        m = mastered[:, c]
        if m.all() or not m.any():
            gap = 0.0
        else:
            gap = float(pc[q, m].mean() - pc[q, ~m].mean())
        if c not in best or gap > best[c][0]:
            best[c] = (gap, q)
    return sorted(q for _, q in best.values())


def _check_capacity(n_actions: int, depth: int) -> None:
    if (2 * n_actions) ** depth > EXACT_LIMIT:
        raise CapacityError(
            f"search over {n_actions} actions to depth {depth} exceeds {EXACT_LIMIT:.0e} leaves; "
            "use receding mode or a smaller depth")


def terminal_value(model: HPOMDPModel, belief: Belief) -> float:
    return float(belief.bm @ (belief.bs @ model.reward.terminal))


def _q(model, belief, a, depth, actions, discount):
    p = predict_response(model, belief, model.questions[a].id)
    total = 0.0
    for o, po in ((1, p), (0, 1.0 - p)):
        if po <= 0.0:
            continue
        try:
            nxt = update_belief(model, belief, model.questions[a].id, o)
        except ImpossibleEvidenceError:
            continue
        total += po * _value(model, nxt, depth - 1, actions, discount)
    return discount * total


def _value(model, belief, depth, actions, discount):
    if depth == 0:
        return terminal_value(model, belief)
    return max(_q(model, belief, a, depth, actions, discount) for a in actions)


def action_value(model: HPOMDPModel, belief: Belief, action, config: PlannerConfig) -> float:
    """Q(belief, action): expected value over both answers, then the best
    continuation for the remaining search depth."""
    a = model.action(action)
    actions = candidate_actions(model, config.action_reduction)
    _check_capacity(len(actions), config.search_depth)
    return _q(model, belief, a, config.search_depth, actions, config.discount)


def action_values(model: HPOMDPModel, belief: Belief, config: PlannerConfig) -> dict:
    actions = candidate_actions(model, config.action_reduction)
    _check_capacity(len(actions), config.search_depth)
    return {model.questions[a].id: _q(model, belief, a, config.search_depth, actions, config.discount)
            for a in actions}


def best_action(model: HPOMDPModel, belief: Belief, config: PlannerConfig) -> str:
    """argmax over the searched actions; near-ties go to the earliest catalog entry."""
    actions = candidate_actions(model, config.action_reduction)
    if not actions:
        raise ContractError("no actions to choose from")
    _check_capacity(len(actions), config.search_depth)
    values = [_q(model, belief, a, config.search_depth, actions, config.discount) for a in actions]
    top = max(values)
    for a, v in zip(actions, values):
        if v >= top - TIE_TOL:
            return model.questions[a].id
    raise AssertionError("unreachable")


def exact_value(model: HPOMDPModel, belief: Belief, horizon: int, discount: float = 1.0,
                action_reduction: str = "per-concept") -> float:
    """Full-horizon expectimax value V_H(belief); refuses oversized trees."""
    if horizon < 1:
        raise ContractError("horizon must be >= 1")
    actions = candidate_actions(model, action_reduction)
    _check_capacity(len(actions), horizon)
    return _value(model, belief, horizon, actions, discount)
