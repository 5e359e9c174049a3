"""Generative partially hidden HMM over discretized observations.

Observations are mapped to symbols combining a position cell and a
velocity bin per axis.  Baum-Welch runs the forward-backward pass on the
chain ``log pi + log B`` / ``log A + log B`` with the visible labels and
allowed sets as constraints, so the clamped log-partition is the joint
incomplete log-likelihood ``log p(v, x)``.  Every count table receives
additive smoothing ``a`` before normalization, which makes the update the
MAP step under a symmetric Dirichlet prior.  The quantity EM is guaranteed
to increase is then the penalized objective

    log p(v, x) + a * (sum log pi + sum log A + sum log B)

and that is what the training trace records.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import chain
from .features import raw_observation_features
from .seqdata import LabelAlphabet, as_constraint, label_mask

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiscretizerConfig:
    room: tuple = (4.0, 6.0)
    n_x: int = 4
    n_y: int = 6
    velocity_threshold: float = 0.1
    w: int = 2

    @property
    def n_symbols(self) -> int:
        return self.n_x * self.n_y * 9

    def to_dict(self) -> dict:
        return {"room": list(self.room), "n_x": self.n_x, "n_y": self.n_y,
                "velocity_threshold": self.velocity_threshold, "w": self.w}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscretizerConfig":
        return cls(tuple(d["room"]), int(d["n_x"]), int(d["n_y"]),
                   float(d["velocity_threshold"]), int(d["w"]))


def _velocity_bin(v, thr):
    return np.where(v < -thr, 0, np.where(v > thr, 2, 1))


def discretize(x, config: DiscretizerConfig = DiscretizerConfig()) -> np.ndarray:
    """Symbol per position: ``((cell_x * n_y + cell_y) * 3 + vbin_x) * 3 + vbin_y``.

    Points outside the room fall into the nearest edge cell.  Velocity bins
    are negative / near zero / positive around ``velocity_threshold``.
    """
    xy = np.asarray(x.obs if hasattr(x, "obs") else x, dtype=float)
    width, height = config.room
    cx = np.clip(np.floor(xy[:, 0] / width * config.n_x), 0, config.n_x - 1).astype(int)
    cy = np.clip(np.floor(xy[:, 1] / height * config.n_y), 0, config.n_y - 1).astype(int)
    g = raw_observation_features(xy, config.w)
    vx = _velocity_bin(g[:, 2], config.velocity_threshold)
    vy = _velocity_bin(g[:, 3], config.velocity_threshold)
    return ((cx * config.n_y + cy) * 3 + vx) * 3 + vy


@dataclass(frozen=True, eq=False)
class PhmmParams:
    pi: np.ndarray
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        for name in ("pi", "A", "B"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    def check(self, atol=1e-12):
        for arr in (self.pi[None], self.A, self.B):
            if np.any(arr < 0) or not np.allclose(arr.sum(axis=1), 1.0, rtol=0, atol=atol):
                raise ValueError("parameters are not stochastic")

    def table(self, symbols) -> chain.PotentialTable:
        with np.errstate(divide="ignore"):  # zero probabilities become -inf
            unary = np.log(self.B[:, symbols].T)  # (T, L)
            unary[0] += np.log(self.pi)
            return chain.PotentialTable.from_unary(unary, np.log(self.A))


@dataclass(frozen=True)
class PhmmConfig:
    discretizer: DiscretizerConfig = DiscretizerConfig()
    smoothing: float = 0.1
    tol: float = 1e-5
    max_iter: int = 200
    n_restarts: int = 5
    seed: int = 0


@dataclass(frozen=True, eq=False)
class PhmmModel:
    params: PhmmParams
    discretizer: DiscretizerConfig
    alphabet: LabelAlphabet
    info: dict = field(default_factory=dict, compare=False)

    family = "PHMM"


def _prepare(dataset, n_labels, config):
    symbols = [discretize(seq, config.discretizer) for seq in dataset]
    masks = [label_mask(seq.labels, n_labels) for seq in dataset]
    return symbols, masks


def _normalize(counts):
    return counts / counts.sum(axis=-1, keepdims=True)


class _Batch:
    def __init__(self, symbols, masks):
        self.sym, self.lengths = chain.pad_batch([np.asarray(s) for s in symbols])
        self.mask, _ = chain.pad_batch(masks, fill=True)
        N = self.sym.shape[1]
        self.valid = np.arange(N)[None, :] < self.lengths[:, None]

    def tables(self, params: PhmmParams):
        with np.errstate(divide="ignore"):
            lB = np.moveaxis(np.log(params.B)[:, self.sym], 0, -1)  # (B, N, L)
            u = lB[:, 0] + np.log(params.pi)
            p = np.log(params.A)[None, None] + lB[:, 1:, None, :]
        return u, p


def joint_loglik(params: PhmmParams, symbols, masks) -> float:
    """``sum_seq log p(v, x)``; all-True masks give ``log p(x)``."""
    batch = _Batch(symbols, masks)
    u, p = batch.tables(params)
    return float(np.sum(chain.batch_posteriors(u, p, batch.mask, batch.lengths, marginals=False)))


def log_prior(params: PhmmParams, smoothing: float) -> float:
    """Smoothing term of the penalized objective (0 when ``smoothing`` is 0)."""
    if smoothing == 0:
        return 0.0
    return smoothing * float(np.log(params.pi).sum() + np.log(params.A).sum()
                             + np.log(params.B).sum())


def penalized_loglik(params: PhmmParams, symbols, masks, smoothing: float) -> float:
    return joint_loglik(params, symbols, masks) + log_prior(params, smoothing)


def count_params(symbols, masks, n_labels, n_symbols, smoothing) -> PhmmParams:
    """Smoothed relative frequencies from the visible part of the data.

    Only positions (and adjacent pairs) with a single allowed label count.
    """
    c_pi = np.full(n_labels, smoothing)
    c_A = np.full((n_labels, n_labels), smoothing)
    c_B = np.full((n_labels, n_symbols), smoothing)
    for sym, mask in zip(symbols, masks):
        vis = mask.sum(axis=1) == 1
        lab = mask.argmax(axis=1)
        if vis[0]:
            c_pi[lab[0]] += 1
        for t in range(len(sym)):
            if vis[t]:
                c_B[lab[t], sym[t]] += 1
            if t > 0 and vis[t] and vis[t - 1]:
                c_A[lab[t - 1], lab[t]] += 1
    return PhmmParams(_normalize(c_pi), _normalize(c_A), _normalize(c_B))


def em_train(symbols, masks, init: PhmmParams, smoothing: float = 0.1, tol: float = 1e-5,
             max_iter: int = 200):
    """Constrained Baum-Welch from ``init``.

    Returns ``(params, trace)`` where ``trace[i]`` is the penalized
    objective (``log p(v, x)`` plus the smoothing term) after ``i`` M-steps.
    """
    if len(symbols) == 0:
        raise ValueError("empty dataset")
    batch = _Batch(symbols, masks)
    L, M = init.B.shape
    params = init
    trace = []
    for it in range(max_iter + 1):
        u, p = batch.tables(params)
        log_Z, mu, xi = chain.batch_posteriors(u, p, batch.mask, batch.lengths)
        ll = float(np.sum(log_Z)) + log_prior(params, smoothing)
        trace.append(ll)
        if it > 0 and abs(ll - trace[-2]) / max(abs(ll), abs(trace[-2]), 1.0) < tol:
            break
        if it == max_iter:
            break
        c_pi = smoothing + mu[:, 0].sum(axis=0)
        c_A = smoothing + xi.sum(axis=(0, 1))
        c_B = np.full((L, M), smoothing)
        flat_sym = batch.sym[batch.valid]
        flat_mu = mu[batch.valid]  # (n_tokens, L)
        np.add.at(c_B.T, flat_sym, flat_mu)
        params = PhmmParams(_normalize(c_pi), _normalize(c_A), _normalize(c_B))
    return params, trace


def initial_candidates(symbols, masks, n_labels, n_symbols, smoothing, n_restarts, seed):
    """Count-based start plus ``n_restarts - 1`` random perturbations of it."""
    if n_restarts < 1:
        raise ValueError("n_restarts must be >= 1")
    base = count_params(symbols, masks, n_labels, n_symbols, smoothing)
    rng = np.random.default_rng(seed)
    out = [base]
    for _ in range(n_restarts - 1):
        def jitter(p):
            return _normalize(p * rng.gamma(1.0, 1.0, size=p.shape))
        out.append(PhmmParams(jitter(base.pi), jitter(base.A), jitter(base.B)))
    return out


def init_params(dataset, alphabet: LabelAlphabet, config: PhmmConfig = PhmmConfig()):
    """Run EM from every initial candidate and keep the best final objective.

    Returns ``(params, trace)`` of the winner; ties go to the earliest candidate.
    """
    symbols, masks = _prepare(dataset, alphabet.size, config)
    cands = initial_candidates(symbols, masks, alphabet.size, config.discretizer.n_symbols,
                               config.smoothing, config.n_restarts, config.seed)
    best = None
    for cand in cands:
        params, trace = em_train(symbols, masks, cand, config.smoothing, config.tol,
                                 config.max_iter)
        if best is None or trace[-1] > best[1][-1]:
            best = (params, trace)
    return best


def train(dataset, alphabet: LabelAlphabet, config: PhmmConfig = PhmmConfig()) -> PhmmModel:
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    for seq in dataset:
        seq.validate(alphabet.size)
    params, trace = init_params(dataset, alphabet, config)
    ll = trace[-1] - log_prior(params, config.smoothing)
    log.info("PHMM EM: %d iterations, penalized objective %.6f, log p(v, x) %.6f",
             len(trace) - 1, trace[-1], ll)
    return PhmmModel(params, config.discretizer, alphabet,
                     {"iterations": len(trace) - 1, "objective": trace[-1], "loglik": ll,
                      "history": trace})


def segment(model, x, constraint=None) -> list:
    """Viterbi path of the joint model; ``model`` is a PhmmModel or
    ``(params, discretizer)``."""
    if isinstance(model, PhmmModel):
        params, disc = model.params, model.discretizer
    else:
        params, disc = model
    sym = discretize(x, disc)
    pot = params.table(sym)
    return chain.viterbi(pot, as_constraint(constraint, pot.n_labels))
