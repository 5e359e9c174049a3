"""Log-domain inference on linear chains.

A :class:`PotentialTable` holds ``unary1`` (log-potentials of the first
label) and ``pairwise[t-1]`` (log-potentials of ``(y[t-1], y[t])`` for
t = 1..T-1, with any unary term at t folded in).  Constraints are boolean
``(T, L)`` masks of allowed labels; disallowed entries are treated as
``-inf``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NEG_INF = -np.inf


def logsumexp(a, axis=None):
    """Log-sum-exp that maps all-``-inf`` slices to ``-inf`` without warnings."""
    a = np.asarray(a)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis) if axis is not None else out.reshape(())


@dataclass(frozen=True)
class PotentialTable:
    unary1: np.ndarray
    pairwise: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.unary1, dtype=float)
        p = np.asarray(self.pairwise, dtype=float)
        L = u.shape[0]
        if p.size == 0:
            p = p.reshape(0, L, L)
        if p.ndim != 3 or p.shape[1:] != (L, L):
            raise ValueError(f"pairwise must have shape (T-1, {L}, {L}), got {p.shape}")
        object.__setattr__(self, "unary1", u)
        object.__setattr__(self, "pairwise", p)

    @property
    def T(self) -> int:
        return self.pairwise.shape[0] + 1

    @property
    def n_labels(self) -> int:
        return self.unary1.shape[0]

    @classmethod
    def from_unary(cls, unary: np.ndarray, trans: np.ndarray) -> "PotentialTable":
        """Table with per-position ``unary`` (T, L) and a shared ``trans`` (L, L)."""
        unary = np.asarray(unary, dtype=float)
        return cls(unary[0], unary[1:, None, :] + np.asarray(trans)[None, :, :])

    def path_score(self, path) -> float:
        score = self.unary1[path[0]]
        for t in range(1, len(path)):
            score += self.pairwise[t - 1, path[t - 1], path[t]]
        return float(score)


@dataclass(frozen=True)
class Posteriors:
    log_Z: float
    unary: np.ndarray  # (T, L)
    pairwise: np.ndarray  # (T-1, L, L)


def _mask(pot: PotentialTable, constraint) -> np.ndarray:
    if constraint is None:
        return np.ones((pot.T, pot.n_labels), dtype=bool)
    c = np.asarray(constraint, dtype=bool)
    if c.shape != (pot.T, pot.n_labels):
        raise ValueError(f"constraint shape {c.shape} does not match table ({pot.T}, {pot.n_labels})")
    if not c.any(axis=1).all():
        raise ValueError("every position must allow at least one label")
    return c


def _masked(pot: PotentialTable, mask: np.ndarray):
    u = np.where(mask[0], pot.unary1, NEG_INF)
    p = np.where(mask[1:, None, :] & mask[:-1, :, None], pot.pairwise, NEG_INF)
    return u, p


def _forward(u, p):
    T = p.shape[0] + 1
    alpha = np.empty((T, u.shape[0]))
    alpha[0] = u
    for t in range(1, T):
        alpha[t] = logsumexp(alpha[t - 1][:, None] + p[t - 1], axis=0)
    return alpha


def _backward(p, L):
    T = p.shape[0] + 1
    beta = np.zeros((T, L))
    for t in range(T - 2, -1, -1):
        beta[t] = logsumexp(p[t] + beta[t + 1][None, :], axis=1)
    return beta


def log_partition(pot: PotentialTable, constraint=None) -> float:
    """Log-sum of exp(path score) over all paths allowed by ``constraint``."""
    u, p = _masked(pot, _mask(pot, constraint))
    alpha = _forward(u, p)
    return float(logsumexp(alpha[-1]))


def posteriors(pot: PotentialTable, constraint=None) -> Posteriors:
    """Exact unary and pairwise marginals of the constrained chain."""
    u, p = _masked(pot, _mask(pot, constraint))
    alpha = _forward(u, p)
    beta = _backward(p, pot.n_labels)
    log_Z = float(logsumexp(alpha[-1]))
    # disallowed cells are -inf on both sides, so exp gives exact zeros
    unary = np.exp(alpha + beta - log_Z)
    pair = np.exp(alpha[:-1, :, None] + p + beta[1:, None, :] - log_Z)
    return Posteriors(log_Z, unary, pair)


def viterbi(pot: PotentialTable, constraint=None, return_score: bool = False):
    """Best allowed path; ties go to the lowest label index.

    Returns the label list, or ``(labels, score)`` when ``return_score``.
    """
    u, p = _masked(pot, _mask(pot, constraint))
    T, L = pot.T, pot.n_labels
    delta = u
    back = np.zeros((T, L), dtype=np.int64)
    for t in range(1, T):
        cand = delta[:, None] + p[t - 1]
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(L)]
    best = int(np.argmax(delta))
    score = float(delta[best])
    path = [best]
    for t in range(T - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    path.reverse()
    if return_score:
        return path, score
    return path


# ---------------------------------------------------------------------------
# padded batches, used by the training loops


def pad_batch(arrays, fill=0.0):
    """Stack arrays of shape (T_i, ...) into (B, max T_i, ...) plus lengths."""
    lengths = np.array([a.shape[0] for a in arrays], dtype=np.int64)
    N = int(lengths.max())
    out = np.full((len(arrays), N) + arrays[0].shape[1:], fill, dtype=arrays[0].dtype)
    for i, a in enumerate(arrays):
        out[i, : a.shape[0]] = a
    return out, lengths


def batch_posteriors(unary1, pairwise, mask, lengths, marginals=True):
    """Forward-backward over a padded batch.

    ``unary1`` is (B, L), ``pairwise`` (B, N-1, L, L), ``mask`` (B, N, L)
    and ``lengths`` (B,).  Padding steps are replaced by identity
    transitions, so they change neither the partition function nor the
    marginals of real positions.  Returns ``(log_Z, unary, pairwise)``
    with marginals zeroed on padding, or just ``log_Z`` when
    ``marginals`` is false.
    """
    B, N, L = mask.shape
    valid = np.arange(N)[None, :] < lengths[:, None]
    mask = mask | ~valid[:, :, None]
    step_valid = valid[:, 1:]
    ident = np.where(np.eye(L, dtype=bool), 0.0, NEG_INF)
    p = np.where(step_valid[:, :, None, None], pairwise, ident)
    p = np.where(mask[:, 1:, None, :] & mask[:, :-1, :, None], p, NEG_INF)
    u = np.where(mask[:, 0], unary1, NEG_INF)
    alpha = np.empty((B, N, L))
    alpha[:, 0] = u
    for t in range(1, N):
        alpha[:, t] = logsumexp(alpha[:, t - 1, :, None] + p[:, t - 1], axis=1)
    log_Z = logsumexp(alpha[:, -1], axis=1)
    if not marginals:
        return log_Z
    beta = np.zeros((B, N, L))
    for t in range(N - 2, -1, -1):
        beta[:, t] = logsumexp(p[:, t] + beta[:, t + 1, None, :], axis=2)
    unary = np.exp(alpha + beta - log_Z[:, None, None]) * valid[:, :, None]
    pair = np.exp(alpha[:, :-1, :, None] + p + beta[:, 1:, None, :] - log_Z[:, None, None, None])
    pair *= step_valid[:, :, None, None]
    return log_Z, unary, pair
