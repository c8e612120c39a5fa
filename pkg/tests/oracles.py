"""Reference implementations written independently of the package code.

They trade speed for obviousness: exhaustive enumeration over state
sequences, and an unscaled single-pattern Baum-Welch update.
"""

import itertools

import numpy as np


def emission(p_correct, a, o, s):
    p = p_correct[a, s]
    return p if o == 1 else 1.0 - p


def enumerate_paths(initial, transition, p_correct, concept_of, actions, observations):
    """Yield (path, joint probability) for every state sequence."""
    n_states = len(initial)
    T = len(actions)
    for path in itertools.product(range(n_states), repeat=T):
        p = initial[path[0]]
        for t in range(T):
            p *= emission(p_correct, actions[t], observations[t], path[t])
            if t + 1 < T:
                p *= transition[concept_of[actions[t]], path[t], path[t + 1]]
        yield path, p


def brute_force_posteriors(initial, transition, p_correct, concept_of, actions, observations):
    """Likelihood, gamma (T, S) and xi (T-1, S, S) by full enumeration."""
    n_states = len(initial)
    T = len(actions)
    total = 0.0
    gamma = np.zeros((T, n_states))
    xi = np.zeros((max(T - 1, 0), n_states, n_states))
    for path, p in enumerate_paths(initial, transition, p_correct, concept_of, actions, observations):
        total += p
        for t in range(T):
            gamma[t, path[t]] += p
            if t + 1 < T:
                xi[t, path[t], path[t + 1]] += p
    return total, gamma / total, xi / total


def baum_welch_update(initial, transition, p_correct, concept_of, mastered, sequences):
    """One unscaled Baum-Welch reestimate for a single pattern whose
    transitions have one learn probability per concept and whose
    observations have one guess and one fluency per question.

    ``sequences`` is a list of (actions, observations) index lists.
    Returns (initial, learn per concept, guess per question, fluency per question).
    """
    n_states = len(initial)
    n_concepts = transition.shape[0]
    n_q = p_correct.shape[0]
    d_acc = np.zeros(n_states)
    flips = np.zeros(n_concepts)
    stays = np.zeros(n_concepts)
    g_num, g_den = np.zeros(n_q), np.zeros(n_q)
    f_num, f_den = np.zeros(n_q), np.zeros(n_q)
    for actions, observations in sequences:
        T = len(actions)
        alpha = np.zeros((T, n_states))
        beta = np.ones((T, n_states))
        e = np.array([[emission(p_correct, actions[t], observations[t], s) for s in range(n_states)]
                      for t in range(T)])
        alpha[0] = initial * e[0]
        for t in range(1, T):
            alpha[t] = (alpha[t - 1] @ transition[concept_of[actions[t - 1]]]) * e[t]
        for t in range(T - 2, -1, -1):
            beta[t] = transition[concept_of[actions[t]]] @ (e[t + 1] * beta[t + 1])
        like = alpha[-1].sum()
        gamma = alpha * beta / like
        d_acc += gamma[0]
        for t in range(T - 1):
            c = concept_of[actions[t]]
            xi = alpha[t][:, None] * transition[c] * (e[t + 1] * beta[t + 1])[None, :] / like
            for s in range(n_states):
                if mastered[s, c]:
                    continue
                # rows where the concept can still flip: mass leaving s vs staying
                leave = xi[s].sum() - xi[s, s]
                if leave > 0 or transition[c, s, s] < 1.0:
                    flips[c] += leave
                    stays[c] += xi[s, s]
        for t in range(T):
            a = actions[t]
            c = concept_of[a]
            un = gamma[t][~mastered[:, c]].sum()
            ma = gamma[t][mastered[:, c]].sum()
            g_den[a] += un
            f_den[a] += ma
            if observations[t] == 1:
                g_num[a] += un
                f_num[a] += ma
    return d_acc / len(sequences), flips / (flips + stays), g_num / g_den, f_num / f_den
