"""Action-conditioned forward-backward for a single pattern component.

The generative order inside one step is: the answer to question ``a_t`` is
emitted from ``s_t``, then the state moves under ``T[concept(a_t)]``. With
``n`` answered questions the likelihood is

    sum_S D(s_1) O(o_1|s_1,a_1) T(s_2|s_1,a_1) ... O(o_n|s_n,a_n)

(the transition after the last answer sums out). Alpha is renormalised every
step and the log normalisers accumulated, so long sequences never underflow.
Sequences are processed as padded batches; padded steps use a unit emission
and an identity transition so they leave every quantity unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import HPOMDPModel, PatternComponent, Trajectory
from .exceptions import ContractError


@dataclass(frozen=True)
class EncodedBatch:
    """Trajectories as padded integer arrays.

    ``actions[n, t]`` indexes the question catalog; ``concepts`` is the
    concept index of each action; padded cells hold 0 and are masked.
    """

    actions: np.ndarray
    concepts: np.ndarray
    observations: np.ndarray
    lengths: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.actions.shape[1])[None, :] < self.lengths[:, None]

    def __len__(self):
        return len(self.lengths)


def encode(trajectories, question_index: dict, concept_of: np.ndarray) -> EncodedBatch:
    trajectories = list(trajectories)
    if not trajectories:
        raise ContractError("no trajectories to encode")
    lengths = np.array([len(tr) for tr in trajectories], dtype=np.int64)
    if (lengths < 1).any():
        raise ContractError("trajectories must contain at least one step")
    actions = np.zeros((len(trajectories), lengths.max()), dtype=np.int64)
    obs = np.zeros_like(actions)
    for n, tr in enumerate(trajectories):
        for t, (a, o) in enumerate(tr.steps):
            try:
                actions[n, t] = question_index[a]
            except KeyError:
                raise ContractError(f"trajectory {tr.student!r} uses unknown action {a!r}") from None
            obs[n, t] = o
    return EncodedBatch(actions, np.asarray(concept_of)[actions], obs, lengths)


def emission_matrix(p_correct: np.ndarray, batch: EncodedBatch) -> np.ndarray:
    """Per-step likelihood ``O(o_t | s, a_t)`` as (N, L, S), ones on padding."""
    pc = p_correct[batch.actions]
    emis = np.where(batch.observations[..., None] == 1, pc, 1.0 - pc)
    return np.where(batch.mask[..., None], emis, 1.0)


def transition_index(batch: EncodedBatch, n_concepts: int) -> np.ndarray:
    """Index into the identity-extended transition stack for steps t -> t+1."""
    idx = batch.concepts[:, :-1].copy()
    live = np.arange(1, batch.actions.shape[1])[None, :] < batch.lengths[:, None]
    idx[~live] = n_concepts
    return idx


def extend_transitions(transition: np.ndarray) -> np.ndarray:
    n_states = transition.shape[-1]
    return np.concatenate([transition, np.eye(n_states)[None]], axis=0)


@dataclass
class ForwardBackward:
    alpha: np.ndarray   # (N, L, S) scaled
    beta: np.ndarray    # (N, L, S) scaled
    scale: np.ndarray   # (N, L) per-step normalisers
    log_likelihood: np.ndarray  # (N,)
    emis: np.ndarray
    tidx: np.ndarray
    trans: np.ndarray

    @property
    def gamma(self) -> np.ndarray:
        g = self.alpha * self.beta
        dead = ~np.isfinite(self.log_likelihood)
        g[dead] = 0.0
        return g

    def xi_step(self, t: int) -> np.ndarray:
        """Pairwise posterior for the t -> t+1 transition, shape (N, S, S)."""
        tm = self.trans[self.tidx[:, t]]
        nxt = self.emis[:, t + 1] * self.beta[:, t + 1]
        c = _safe(self.scale[:, t + 1])
        out = self.alpha[:, t, :, None] * tm * nxt[:, None, :] / c[:, None, None]
        out[~np.isfinite(self.log_likelihood)] = 0.0
        return out


def _safe(c):
    return np.where(c > 0, c, 1.0)


def forward_backward(initial: np.ndarray, transition: np.ndarray, p_correct: np.ndarray,
                     batch: EncodedBatch, backward: bool = True) -> ForwardBackward:
    """Scaled forward(-backward) for one component over a padded batch."""
    n_seq, length = batch.actions.shape
    n_states = len(initial)
    emis = emission_matrix(p_correct, batch)
    trans = extend_transitions(np.asarray(transition))
    tidx = transition_index(batch, transition.shape[0])

    alpha = np.empty((n_seq, length, n_states))
    scale = np.empty((n_seq, length))
    a = np.asarray(initial)[None, :] * emis[:, 0]
    for t in range(length):
        if t > 0:
            a = np.einsum("ns,nsr->nr", alpha[:, t - 1], trans[tidx[:, t - 1]]) * emis[:, t]
        c = a.sum(axis=1)
        scale[:, t] = c
        alpha[:, t] = a / _safe(c)[:, None]
    with np.errstate(divide="ignore"):
        loglik = np.log(scale).sum(axis=1)

    beta = np.ones((n_seq, length, n_states))
    if backward:
        for t in range(length - 2, -1, -1):
            nxt = emis[:, t + 1] * beta[:, t + 1]
            beta[:, t] = np.einsum("nsr,nr->ns", trans[tidx[:, t]], nxt) / _safe(scale[:, t + 1])[:, None]
    return ForwardBackward(alpha, beta, scale, loglik, emis, tidx, trans)


@dataclass(frozen=True)
class PosteriorTables:
    """Posterior marginals of one trajectory under one component.

    ``gamma[t, s]`` is P(s_t = s | O, A); ``xi[t, s, s']`` is
    P(s_t = s, s_{t+1} = s' | O, A) for the ``T - 1`` internal transitions.
    When the trajectory is impossible under the component the log-likelihood
    is ``-inf`` and both tables are all zeros.
    """

    gamma: np.ndarray
    xi: np.ndarray
    log_likelihood: float
    scaling_factors: np.ndarray

    @property
    def impossible(self) -> bool:
        return not np.isfinite(self.log_likelihood)


def _single(model: HPOMDPModel, trajectory: Trajectory) -> EncodedBatch:
    if not isinstance(trajectory, Trajectory) or len(trajectory) == 0:
        raise ContractError("need a non-empty Trajectory")
    return encode([trajectory], model.question_index, model.concept_of)


def _component(model: HPOMDPModel, component) -> PatternComponent:
    if isinstance(component, PatternComponent):
        return component
    return model.components[int(component)]


def sequence_log_likelihood(model: HPOMDPModel, component, trajectory: Trajectory) -> float:
    """log P(O | m_j, A) for one trajectory under one component.

    ``component`` is either a component index into ``model`` or a
    :class:`PatternComponent` evaluated with the model's shared observation
    function. Returns ``-inf`` for an impossible trajectory.
    """
    comp = _component(model, component)
    batch = _single(model, trajectory)
    fb = forward_backward(comp.initial, comp.transition, model.p_correct, batch, backward=False)
    return float(fb.log_likelihood[0])


def posterior_marginals(model: HPOMDPModel, component, trajectory: Trajectory) -> PosteriorTables:
    comp = _component(model, component)
    batch = _single(model, trajectory)
    fb = forward_backward(comp.initial, comp.transition, model.p_correct, batch)
    length = len(trajectory)
    xi = np.stack([fb.xi_step(t)[0] for t in range(length - 1)]) if length > 1 \
        else np.zeros((0, len(comp.initial), len(comp.initial)))
    return PosteriorTables(
        gamma=fb.gamma[0],
        xi=xi,
        log_likelihood=float(fb.log_likelihood[0]),
        scaling_factors=fb.scale[0].copy(),
    )


def component_log_likelihoods(model: HPOMDPModel, trajectories) -> np.ndarray:
    """(l, k) matrix of per-trajectory, per-component log-likelihoods."""
    batch = encode(trajectories, model.question_index, model.concept_of)
    return np.column_stack([
        forward_backward(c.initial, c.transition, model.p_correct, batch, backward=False).log_likelihood
        for c in model.components
    ])
