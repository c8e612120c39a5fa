"""EM learning of a mixture of homomorphic POMDPs.

Each iteration runs one forward-backward pass per pattern over the padded
batch, turns the per-trajectory likelihoods into membership
responsibilities, and re-estimates

* the initial distribution of every pattern,
* one learn probability per (pattern, concept) -- transitions are tied across
  questions of a concept and may only flip the acted concept from 0 to 1,
* the shared guess / fluency of every question, pooled over patterns.

Every M-step is an exact maximiser over the feasible set (probability floor,
``fluency >= guess + margin``), so the total log-likelihood never decreases.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .domain import (
    Dataset, HPOMDPModel, ObservationFunction, PatternComponent, StateSpace,
    validate_model,
)
from .exceptions import ContractError, ImpossibleEvidenceError
from .inference import EncodedBatch, encode, forward_backward

logger = logging.getLogger(__name__)

MEMBERSHIP_RULES = ("derived", "printed", "sequence")
INITIAL_RULES = ("weighted", "printed")
CONSTRAINT_MARGIN = 1e-3


@dataclass(frozen=True)
class EMConfig:
    """Settings for :func:`em_fit`.

    ``membership_rule`` sets the prior factor in the membership update
    w_ij = prior_ij P(O_i | m_j) / sum_j' prior_ij' P(O_i | m_j'):

    * ``'derived'``: the population share of pattern j, i.e. the column mean
      of the previous memberships (standard mixture EM);
    * ``'sequence'``: the trajectory's own previous membership w_ij;
    * ``'printed'``: no prior (uniform).

    ``initial_distribution_rule='weighted'`` weights each trajectory's first
    posterior by its responsibility; ``'printed'`` takes the unweighted
    average over all trajectories.
    """

    k: int = 1
    max_iterations: int = 200
    convergence_threshold: float = 1e-4
    restarts: int = 5
    seed: int = 0
    membership_rule: str = "derived"
    initial_distribution_rule: str = "weighted"
    floor_probability: float = 1e-6
    state_mode: str = "filtered"
    n_jobs: int = 1

    def __post_init__(self):
        if int(self.k) < 1:
            raise ContractError("k must be >= 1")
        if self.max_iterations < 1 or self.restarts < 1:
            raise ContractError("max_iterations and restarts must be >= 1")
        if not self.convergence_threshold > 0:
            raise ContractError("convergence_threshold must be > 0")
        if not 0 <= self.floor_probability < 0.01:
            raise ContractError("floor_probability must be in [0, 0.01)")
        if self.membership_rule not in MEMBERSHIP_RULES:
            raise ContractError(f"membership_rule must be one of {MEMBERSHIP_RULES}")
        if self.initial_distribution_rule not in INITIAL_RULES:
            raise ContractError(f"initial_distribution_rule must be one of {INITIAL_RULES}")


@dataclass
class FitResult:
    model: HPOMDPModel
    membership: np.ndarray
    log_likelihood_trace: list
    iterations: int
    converged: bool
    restart_index: int
    warnings: list = field(default_factory=list)

    @property
    def log_likelihood(self) -> float:
        return self.log_likelihood_trace[-1]


@dataclass
class EMStepResult:
    model: HPOMDPModel
    membership: np.ndarray
    log_likelihood: float          # total under the *input* parameters
    component_log_likelihoods: np.ndarray
    degenerate: list
    warnings: list


# --------------------------------------------------------------------------
# parameter bundle used inside the loop


@dataclass
class _Params:
    initial: np.ndarray            # (k, S)
    learn: np.ndarray              # (k, K)
    guess: np.ndarray              # (Q,)
    fluency: np.ndarray            # (Q,)
    table: Optional[np.ndarray]    # (Q, S) P(correct) in full-table mode

    def copy(self):
        return _Params(self.initial.copy(), self.learn.copy(), self.guess.copy(),
                       self.fluency.copy(), None if self.table is None else self.table.copy())

    def transitions(self, space: StateSpace) -> np.ndarray:
        return np.stack([space.transition_tables(l) for l in self.learn])

    def p_correct(self, space: StateSpace, concept_of) -> np.ndarray:
        if self.table is not None:
            return self.table
        mastered = space.mastered[:, concept_of].T
        return np.where(mastered, self.fluency[:, None], self.guess[:, None])

    def max_change(self, other: "_Params") -> float:
        parts = [self.initial - other.initial, self.learn - other.learn]
        if self.table is not None:
            parts.append(self.table - other.table)
        else:
            parts += [self.guess - other.guess, self.fluency - other.fluency]
        return float(max(np.abs(p).max() for p in parts))

    @classmethod
    def from_model(cls, model: HPOMDPModel) -> "_Params":
        space = model.space
        obs = model.observation
        return cls(
            initial=np.stack([np.asarray(c.initial, float) for c in model.components]),
            learn=np.stack([c.learn_probabilities(space) for c in model.components]),
            guess=np.asarray(obs.guess, float).copy(),
            fluency=np.asarray(obs.fluency, float).copy(),
            table=None if obs.table is None else np.asarray(obs.table, float).copy(),
        )

    def to_model(self, template: HPOMDPModel, membership=None, metadata=None) -> HPOMDPModel:
        space = template.space
        comps = tuple(PatternComponent.from_learn_probabilities(space, d, l)
                      for d, l in zip(self.initial, self.learn))
        obs = ObservationFunction(self.guess, self.fluency, self.table)
        return template.replace(components=comps, observation=obs, membership=membership,
                                membership_summary=None if membership is None else membership.mean(axis=0),
                                metadata=dict(metadata or template.metadata))


# --------------------------------------------------------------------------
# exact constrained maximisers


def floored_categorical(counts: np.ndarray, floor: float) -> np.ndarray:
    """argmax of sum(n_s log p_s) over {p >= floor, sum p = 1}.

    Water-filling: p_s = max(floor, n_s / lam) with lam fixed by the sum.
    """
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total <= 0:
        raise ValueError("no counts")
    if floor <= 0:
        return counts / total
    clipped = np.zeros(len(counts), dtype=bool)
    while True:
        free_mass = 1.0 - floor * clipped.sum()
        lam = counts[~clipped].sum() / free_mass
        p = np.where(clipped, floor, counts / lam)
        newly = (~clipped) & (p < floor)
        if not newly.any():
            return p
        clipped |= newly


def _bernoulli_objective(p, hits, trials):
    with np.errstate(divide="ignore", invalid="ignore"):
        a = hits * np.log(p) if hits > 0 else 0.0
        b = (trials - hits) * np.log1p(-p) if trials - hits > 0 else 0.0
    return a + b


def constrained_guess_fluency(g_hits, g_trials, f_hits, f_trials, prev_g, prev_f,
                              floor=1e-6, margin=CONSTRAINT_MARGIN):
    """Maximise the two Bernoulli log-likelihoods subject to
    ``fluency >= guess + margin`` and the probability floor.

    Sides without data keep their previous value (then the constraint is
    restored by moving only the data-free side).
    """
    lo, hi = floor, 1.0 - floor
    g = min(max(g_hits / g_trials, lo), hi) if g_trials > 0 else prev_g
    f = min(max(f_hits / f_trials, lo), hi) if f_trials > 0 else prev_f
    if f >= g + margin:
        return g, f
    if g_trials <= 0 and f_trials <= 0:
        return g, f
    if g_trials <= 0:
        g = max(lo, min(g, f - margin))
        return g, max(f, g + margin)
    if f_trials <= 0:
        f = min(hi, max(f, g + margin))
        return min(g, f - margin), f

    # on the active boundary f = g + margin; derivative is decreasing in g
    def slope(x):
        y = x + margin
        return (g_hits / x - (g_trials - g_hits) / (1 - x)
                + f_hits / y - (f_trials - f_hits) / (1 - y))

    a, b = lo, hi - margin
    if slope(a) <= 0:
        x = a
    elif slope(b) >= 0:
        x = b
    else:
        for _ in range(200):
            mid = 0.5 * (a + b)
            if slope(mid) > 0:
                a = mid
            else:
                b = mid
            if b - a < 1e-15:
                break
        x = 0.5 * (a + b)
    return x, x + margin


# --------------------------------------------------------------------------
# E-step / M-step


@dataclass
class _Stats:
    initial: np.ndarray      # (k, S)
    learn_num: np.ndarray    # (k, K)
    learn_den: np.ndarray    # (k, K)
    g_hits: np.ndarray       # (Q,)
    g_trials: np.ndarray
    f_hits: np.ndarray
    f_trials: np.ndarray
    tab_hits: Optional[np.ndarray]
    tab_trials: Optional[np.ndarray]
    resp_total: np.ndarray   # (k,)


class _BatchTables:
    """Index tables for one batch, computed once per fit."""

    def __init__(self, space: StateSpace, batch: EncodedBatch):
        self.batch = batch
        self.mask = batch.mask
        self.live = self.mask[:, 1:]                                   # transition t -> t+1 exists
        self.acts = batch.actions[self.mask]
        self.obs = batch.observations[self.mask].astype(float)
        self.step_concepts = batch.concepts[:, :-1]
        flip = space.flip[self.step_concepts]                          # (N, L-1, S)
        self.feasible = flip >= 0
        self.safe = np.where(self.feasible, flip, np.arange(len(space)))
        self.mastered = np.moveaxis(space.mastered[:, batch.concepts], 0, -1)  # (N, L, S)


def _log_likelihoods(params: _Params, space, concept_of, batch: EncodedBatch):
    trans = params.transitions(space)
    pc = params.p_correct(space, concept_of)
    fbs = [forward_backward(params.initial[j], trans[j], pc, batch) for j in range(len(params.initial))]
    return fbs, np.column_stack([fb.log_likelihood for fb in fbs])


def _log_prior(membership, rule, shape):
    k = shape[1]
    with np.errstate(divide="ignore"):
        if rule == "derived":
            return np.broadcast_to(np.log(membership.mean(axis=0)), shape)
        if rule == "sequence":
            return np.log(membership)
    return np.full(shape, -math.log(k))


def _responsibilities(loglik, membership, rule):
    joint = _log_prior(membership, rule, loglik.shape) + loglik
    total = logsumexp(joint, axis=1)
    bad = ~np.isfinite(total)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ImpossibleEvidenceError(f"trajectory {i} has zero likelihood under every pattern")
    return np.exp(joint - total[:, None]), float(total.sum())


def _e_step(params, membership, space, concept_of, tables: _BatchTables, rule, initial_rule):
    batch = tables.batch
    fbs, loglik = _log_likelihoods(params, space, concept_of, batch)
    resp, total = _responsibilities(loglik, membership, rule)
    k, n_states = params.initial.shape
    n_concepts = params.learn.shape[1]
    n_q = len(params.guess)
    stats = _Stats(
        initial=np.zeros((k, n_states)), learn_num=np.zeros((k, n_concepts)),
        learn_den=np.zeros((k, n_concepts)), g_hits=np.zeros(n_q), g_trials=np.zeros(n_q),
        f_hits=np.zeros(n_q), f_trials=np.zeros(n_q),
        tab_hits=None if params.table is None else np.zeros((n_q, n_states)),
        tab_trials=None if params.table is None else np.zeros((n_q, n_states)),
        resp_total=resp.sum(axis=0),
    )
    live = tables.live
    step_c = tables.step_concepts[live]
    for j, fb in enumerate(fbs):
        r = resp[:, j]
        gamma = fb.gamma
        w0 = r if initial_rule == "weighted" else np.ones_like(r)
        stats.initial[j] = w0 @ gamma[:, 0]

        if batch.actions.shape[1] > 1:
            # expected 0 -> 1 flips of the acted concept, and the mass that could have flipped
            tval = fb.trans[fb.tidx[:, :, None], np.arange(n_states), tables.safe]
            nxt = fb.emis[:, 1:] * fb.beta[:, 1:]
            scale = np.where(fb.scale[:, 1:] > 0, fb.scale[:, 1:], 1.0)
            moved = fb.alpha[:, :-1] * tval * np.take_along_axis(nxt, tables.safe, axis=2)
            num = np.where(tables.feasible, moved, 0.0).sum(axis=2) / scale
            den = np.where(tables.feasible, gamma[:, :-1], 0.0).sum(axis=2)
            rw = np.broadcast_to(r[:, None], num.shape)[live]
            stats.learn_num[j] = np.bincount(step_c, weights=rw * num[live], minlength=n_concepts)
            stats.learn_den[j] = np.bincount(step_c, weights=rw * den[live], minlength=n_concepts)

        if params.table is None:
            m = (gamma * tables.mastered).sum(axis=2)
            u = gamma.sum(axis=2) - m
            rm, ru = (r[:, None] * m)[tables.mask], (r[:, None] * u)[tables.mask]
            stats.f_trials += np.bincount(tables.acts, weights=rm, minlength=n_q)
            stats.f_hits += np.bincount(tables.acts, weights=rm * tables.obs, minlength=n_q)
            stats.g_trials += np.bincount(tables.acts, weights=ru, minlength=n_q)
            stats.g_hits += np.bincount(tables.acts, weights=ru * tables.obs, minlength=n_q)
        else:
            rg = (r[:, None, None] * gamma)[tables.mask]
            np.add.at(stats.tab_trials, tables.acts, rg)
            np.add.at(stats.tab_hits, tables.acts, rg * tables.obs[:, None])
    return stats, resp, loglik, total


def _m_step(params: _Params, stats: _Stats, n_seq, floor, initial_rule, frozen=()):
    new = params.copy()
    k = len(params.initial)
    for j in range(k):
        if j in frozen:
            continue
        counts = stats.initial[j] / (n_seq if initial_rule == "printed" else 1.0)
        if counts.sum() > 0:
            new.initial[j] = floored_categorical(counts, floor)
        den = stats.learn_den[j]
        with np.errstate(invalid="ignore", divide="ignore"):
            est = np.where(den > 0, stats.learn_num[j] / np.where(den > 0, den, 1.0), params.learn[j])
        new.learn[j] = np.clip(est, floor, 1.0 - floor)
    if params.table is None:
        for q in range(len(params.guess)):
            new.guess[q], new.fluency[q] = constrained_guess_fluency(
                stats.g_hits[q], stats.g_trials[q], stats.f_hits[q], stats.f_trials[q],
                params.guess[q], params.fluency[q], floor=floor)
    else:
        trials = stats.tab_trials
        with np.errstate(invalid="ignore", divide="ignore"):
            est = np.where(trials > 0, stats.tab_hits / np.where(trials > 0, trials, 1.0), params.table)
        new.table = np.clip(est, floor, 1.0 - floor)
    return new


def _step(params, membership, space, concept_of, tables, config, frozen=()):
    stats, resp, loglik, total = _e_step(params, membership, space, concept_of, tables,
                                         config.membership_rule, config.initial_distribution_rule)
    new = _m_step(params, stats, len(tables.batch), config.floor_probability,
                  config.initial_distribution_rule, frozen)
    k = len(params.initial)
    degenerate = [j for j in range(k) if k > 1 and stats.resp_total[j] < k * config.floor_probability]
    return new, resp, loglik, total, degenerate


def _check_dataset(dataset: Dataset) -> None:
    if not isinstance(dataset, Dataset):
        raise ContractError("expected a Dataset")
    if len(dataset) == 0:
        raise ContractError("dataset is empty")


def _template(dataset: Dataset, state_mode: str, k: int) -> HPOMDPModel:
    # placeholder components; replaced before the model escapes
    space = StateSpace(dataset.graph, state_mode)
    n_states, n_q = len(space), len(dataset.questions)
    comp = PatternComponent.from_learn_probabilities(space, np.full(n_states, 1.0 / n_states),
                                                     np.full(dataset.graph.n_concepts, 0.5))
    obs = ObservationFunction(np.full(n_q, 0.2), np.full(n_q, 0.8))
    return HPOMDPModel(graph=dataset.graph, questions=dataset.questions, components=(comp,) * k,
                       observation=obs, state_mode=state_mode)


def em_step(dataset: Dataset, model: HPOMDPModel, membership=None,
            config: Optional[EMConfig] = None) -> EMStepResult:
    """One full E + M sweep starting from ``model`` and ``membership``.

    ``membership`` defaults to the model's retained matrix, or uniform.
    """
    _check_dataset(dataset)
    config = config or EMConfig(k=model.k)
    batch = encode(dataset.trajectories, model.question_index, model.concept_of)
    if membership is None:
        membership = model.membership
    if membership is None or len(membership) != len(dataset):
        membership = np.full((len(dataset), model.k), 1.0 / model.k)
    membership = np.asarray(membership, dtype=float)
    params = _Params.from_model(model)
    tables = _BatchTables(model.space, batch)
    new, resp, loglik, total, degenerate = _step(params, membership, model.space, model.concept_of,
                                                 tables, config)
    warnings = [f"component {j} received total responsibility below {model.k * config.floor_probability:g}"
                for j in degenerate]
    return EMStepResult(new.to_model(model, resp), resp, total, loglik, degenerate, warnings)


def _random_params(rng, space, n_q, k, floor):
    n_states, n_concepts = len(space), space.graph.n_concepts
    initial = 0.5 / n_states + 0.5 * rng.dirichlet(np.ones(n_states), size=k)
    initial = np.stack([floored_categorical(d, floor) for d in initial])
    learn = rng.uniform(0.05, 0.5, size=(k, n_concepts))
    guess = rng.uniform(0.1, 0.35, size=n_q)
    fluency = rng.uniform(0.65, 0.9, size=n_q)
    return _Params(initial, learn, guess, fluency, None)


def _jittered_params(rng, base: _Params, k, floor):
    n_states = base.initial.shape[1]
    initial = 0.7 * base.initial[0] + 0.3 * rng.dirichlet(np.ones(n_states), size=k)
    initial = np.stack([floored_categorical(d, floor) for d in initial])
    factor = np.exp(rng.uniform(-1.0, 1.0, size=(k, base.learn.shape[1])))
    learn = np.clip(base.learn[0] * factor, 0.01, 0.95)
    return _Params(initial, learn, base.guess.copy(), base.fluency.copy(),
                   None if base.table is None else base.table.copy())


def _responsibility_spread(loglik, resp, j):
    w = resp[:, j]
    if w.sum() <= 0:
        return -np.inf
    mu = np.average(loglik[:, j], weights=w)
    return float(np.average((loglik[:, j] - mu) ** 2, weights=w))


def _run(params, membership, space, concept_of, tables, config, rng):
    trace, warnings = [], []
    reinitialised, frozen = set(), set()
    converged = False
    iterations = 0
    for _ in range(config.max_iterations):
        new, resp, loglik, total, degenerate = _step(params, membership, space, concept_of,
                                                     tables, config, frozen)
        trace.append(total)
        iterations += 1
        fresh = [j for j in degenerate if j not in frozen]
        if fresh:
            for j in fresh:
                if j in reinitialised:
                    frozen.add(j)
                    warnings.append(f"component {j} collapsed again at iteration {iterations}; frozen")
                    continue
                reinitialised.add(j)
                live = [i for i in range(len(params.initial)) if i not in degenerate]
                donor = max(live, key=lambda i: _responsibility_spread(loglik, resp, i))
                new.initial[j] = floored_categorical(
                    0.7 * new.initial[donor] + 0.3 * rng.dirichlet(np.ones(new.initial.shape[1])),
                    config.floor_probability)
                new.learn[j] = np.clip(new.learn[donor] * np.exp(rng.uniform(-1, 1, new.learn.shape[1])),
                                       0.01, 0.95)
                share = resp[:, donor] * rng.uniform(0.3, 0.7, size=len(resp))
                resp[:, j] += share
                resp[:, donor] -= share
                warnings.append(f"component {j} collapsed at iteration {iterations}; "
                                f"reinitialised from component {donor}, trace restarted")
            # the objective changed discontinuously; restart the monotone trace
            trace = []
            params, membership = new, resp
            continue
        delta = max(new.max_change(params), float(np.abs(resp - membership).max()))
        params, membership = new, resp
        if delta < config.convergence_threshold:
            converged = True
            break
    _, resp_final, _, total_final, _ = _step(params, membership, space, concept_of, tables, config, frozen)
    trace.append(total_final)
    return params, membership, trace, iterations, converged, warnings


def _fit_restart(dataset, config, template, tables, r, base):
    rng = np.random.default_rng([config.seed, r])
    n_q, k = len(dataset.questions), config.k
    if k == 1 or base is None:
        params = _random_params(rng, template.space, n_q, k, config.floor_probability)
    else:
        params = _jittered_params(rng, base, k, config.floor_probability)
    membership = np.full((len(dataset), k), 1.0 / k)
    if k > 1:
        membership = membership + rng.uniform(0, 0.1, size=membership.shape)
        membership /= membership.sum(axis=1, keepdims=True)
    return _run(params, membership, template.space, template.concept_of, tables, config, rng)


def em_fit(dataset: Dataset, config: Optional[EMConfig] = None) -> FitResult:
    """Fit a k-pattern model with ``config.restarts`` random initialisations.

    For k > 1 each restart jitters around a pooled single-pattern fit. The
    restart with the highest final total log-likelihood wins.
    """
    _check_dataset(dataset)
    config = config or EMConfig()
    template = _template(dataset, config.state_mode, config.k)
    batch = encode(dataset.trajectories, template.question_index, template.concept_of)
    tables = _BatchTables(template.space, batch)

    base = None
    if config.k > 1:
        pooled = replace(config, k=1, restarts=1, seed=config.seed)
        res = _fit_restart(dataset, pooled, _template(dataset, config.state_mode, 1), tables, 0, None)
        base = res[0]

    def job(r):
        return _fit_restart(dataset, config, template, tables, r, base)

    if config.n_jobs > 1 and config.restarts > 1:
        with ThreadPoolExecutor(max_workers=config.n_jobs) as pool:
            runs = list(pool.map(job, range(config.restarts)))
    else:
        runs = [job(r) for r in range(config.restarts)]

    best = max(range(len(runs)), key=lambda r: (runs[r][2][-1], -r))
    params, membership, trace, iterations, converged, warnings = runs[best]
    metadata = {"seed": config.seed, "iterations": iterations,
                "log_likelihood": trace[-1], "restart": best, "k": config.k}
    model = params.to_model(template, membership, metadata)
    problems = validate_model(model)
    if problems:
        warnings = warnings + [f"fitted model violates {p}" for p in problems]
        logger.warning("fitted model has %d invariant violations", len(problems))
    return FitResult(model, membership, trace, iterations, converged, best, warnings)


def fit_baseline_pomdp(dataset: Dataset, config: Optional[EMConfig] = None) -> FitResult:
    """Single-pattern Baum-Welch fit (the mixture learner with k forced to 1)."""
    config = replace(config or EMConfig(), k=1)
    return em_fit(dataset, config)


# --------------------------------------------------------------------------
# projection of raw (possibly infeasible) parameter tables


@dataclass
class ConstrainedParameters:
    transition: Optional[np.ndarray]   # (K, S, S)
    guess: Optional[np.ndarray]
    fluency: Optional[np.ndarray]


def _support(space: StateSpace) -> np.ndarray:
    n_states = len(space)
    allowed = np.zeros((space.graph.n_concepts, n_states, n_states), dtype=bool)
    rows = np.arange(n_states)
    allowed[:, rows, rows] = True
    for c in range(space.graph.n_concepts):
        ok = space.flip[c] >= 0
        allowed[c, rows[ok], space.flip[c][ok]] = True
    return allowed


def apply_constraints(space: StateSpace, concept_of, *, transition=None, transition_counts=None,
                      guess=None, fluency=None, margin=CONSTRAINT_MARGIN) -> ConstrainedParameters:
    """Project raw per-question parameters onto the feasible set.

    Parameters
    ----------
    space : StateSpace
    concept_of : array of int
        Concept index of every question.
    transition : ndarray (Q, S, S), optional
        Raw per-question transition probabilities. Mass on forbidden moves
        (anything other than the acted concept's 0 -> 1 flip) goes to the
        self-loop; rows of questions sharing a concept are then averaged.
    transition_counts : ndarray (Q, S, S), optional
        Expected transition counts. Counts are pooled per concept and turned
        into one learn probability per concept. Takes precedence over
        ``transition``.
    guess, fluency : ndarray (Q,), optional
        Swapped where guess exceeds fluency, then pulled apart symmetrically
        until ``fluency >= guess + margin``.
    """
    concept_of = np.asarray(concept_of)
    n_concepts = space.graph.n_concepts
    allowed = _support(space)
    rows = np.arange(len(space))
    out_t = None

    if transition_counts is not None:
        counts = np.asarray(transition_counts, dtype=float)
        pooled = np.zeros((n_concepts,) + counts.shape[1:])
        np.add.at(pooled, concept_of, counts)
        learn = np.zeros(n_concepts)
        for c in range(n_concepts):
            ok = space.flip[c] >= 0
            moved = pooled[c, rows[ok], space.flip[c][ok]].sum()
            total = pooled[c, rows[ok]].sum()
            learn[c] = moved / total if total > 0 else 0.0
        out_t = space.transition_tables(learn)
    elif transition is not None:
        raw = np.clip(np.asarray(transition, dtype=float), 0.0, None)
        cleaned = np.zeros_like(raw)
        for q, c in enumerate(concept_of):
            t = np.where(allowed[c], raw[q], 0.0)
            t[rows, rows] += np.where(allowed[c], 0.0, raw[q]).sum(axis=1)
            sums = t.sum(axis=1, keepdims=True)
            cleaned[q] = np.where(sums > 0, t / np.where(sums > 0, sums, 1.0), np.eye(len(space)))
        out_t = np.tile(np.eye(len(space)), (n_concepts, 1, 1))
        for c in range(n_concepts):
            members = np.flatnonzero(concept_of == c)
            if len(members):
                out_t[c] = cleaned[members].mean(axis=0)

    out_g = out_f = None
    if guess is not None and fluency is not None:
        out_g = np.asarray(guess, dtype=float).copy()
        out_f = np.asarray(fluency, dtype=float).copy()
        swap = out_g > out_f
        out_g[swap], out_f[swap] = out_f[swap], out_g[swap].copy()
        short = out_f < out_g + margin
        mid = 0.5 * (out_g + out_f)
        mid = np.clip(mid, margin / 2, 1 - margin / 2)
        out_g[short] = mid[short] - margin / 2
        out_f[short] = mid[short] + margin / 2
    return ConstrainedParameters(out_t, out_g, out_f)
