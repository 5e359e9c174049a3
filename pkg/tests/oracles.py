"""Exhaustive-enumeration references for small chains.

Nothing here uses the package's dynamic programming; every quantity is a
direct sum or max over all label paths.
"""

import itertools
import math

import numpy as np


def paths(T, L, mask=None):
    for path in itertools.product(range(L), repeat=T):
        if mask is None or all(mask[t, y] for t, y in enumerate(path)):
            yield path


def path_score(unary1, pairwise, path):
    s = unary1[path[0]]
    for t in range(1, len(path)):
        s += pairwise[t - 1][path[t - 1]][path[t]]
    return s


def enumerate_chain(unary1, pairwise, mask=None):
    """Return log Z, unary marginals, pairwise marginals and the best score."""
    unary1 = np.asarray(unary1)
    pairwise = np.asarray(pairwise)
    L = unary1.shape[0]
    T = pairwise.shape[0] + 1
    scores = {p: path_score(unary1, pairwise, p) for p in paths(T, L, mask)}
    best = max(scores.values())
    weights = {p: math.exp(s - best) for p, s in scores.items()}
    total = math.fsum(weights.values())
    log_Z = best + math.log(total)
    unary = np.zeros((T, L))
    pair = np.zeros((max(T - 1, 0), L, L))
    for p, wgt in weights.items():
        for t in range(T):
            unary[t, p[t]] += wgt / total
        for t in range(1, T):
            pair[t - 1, p[t - 1], p[t]] += wgt / total
    return log_Z, unary, pair, best


def crf_loglik(weights, index, H, mask):
    """log p(v|x) of a CRF from explicit feature sums over all paths.

    ``H`` is the (T, 5s) context matrix; the features of (t, a, b) are the
    5s context values for label b plus the (a, b) transition indicator.
    """
    T = H.shape[0]
    L = index.n_labels
    w_obs = weights[: index.obs_size].reshape(L, -1)
    w_tr = weights[index.obs_size:].reshape(L, L)

    def score(path):
        s = sum(H[t] @ w_obs[path[t]] for t in range(T))
        s += sum(w_tr[path[t - 1], path[t]] for t in range(1, T))
        return s

    all_scores = [score(p) for p in paths(T, L)]
    vis_scores = [score(p) for p in paths(T, L, mask)]
    return _lse(vis_scores) - _lse(all_scores)


def memm_loglik(local_logprob, T, L, mask):
    """log sum over allowed paths of prod_t p(y_t | y_{t-1}), where
    ``local_logprob(t, prev, y)`` gives the local log-probability."""
    vals = []
    for p in paths(T, L, mask):
        s = local_logprob(0, None, p[0])
        for t in range(1, T):
            s += local_logprob(t, p[t - 1], p[t])
        vals.append(s)
    return _lse(vals)


def _lse(vals):
    m = max(vals)
    return m + math.log(math.fsum(math.exp(v - m) for v in vals))
