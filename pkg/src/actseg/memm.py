"""Partially hidden MEMM with one weight vector shared by all source states.

The local model is

    p(y_t | Omega_t, y_{t-1}) = softmax_y( sum_k lam_k f_k(Omega_t, y_{t-1}, y) )

with the CRF feature set.  The first position uses the START source, where
only state-observation features fire.  Chaining the local log-probabilities
gives a potential table whose free partition function is exactly zero, so
``log p(v | x)`` is just the clamped log-partition.

Training is generalized EM: the E-step computes clamped pairwise
posteriors under the current weights, the M-step improves the expected
complete-data objective by Polak-Ribiere CG.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import chain
from .features import FeatureConfig, FeatureIndex, context_matrix, fit_normalization
from .optim import OptimConfig, cg_polak_ribiere_maximize
from .seqdata import LabelAlphabet, as_constraint, label_mask

log = logging.getLogger(__name__)


class EMError(RuntimeError):
    pass


@dataclass(frozen=True)
class EmConfig:
    sigma: float = 20.0
    tol: float = 1e-5
    max_iter: int = 100
    inner_tol: float = 1e-6
    inner_max_iter: int = 50

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


@dataclass(frozen=True, eq=False)
class MemmModel:
    weights: np.ndarray
    features: FeatureConfig
    index: FeatureIndex
    alphabet: LabelAlphabet
    sigma: float = 20.0
    info: dict = field(default_factory=dict, compare=False)

    family = "MEMM"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.index.K,):
            raise ValueError(f"expected {self.index.K} weights, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        object.__setattr__(self, "weights", w)

    def with_weights(self, weights, info=None) -> "MemmModel":
        return MemmModel(np.asarray(weights, dtype=float), self.features, self.index,
                         self.alphabet, self.sigma, info or {})


def new_model(alphabet: LabelAlphabet, features: FeatureConfig, sigma: float = 20.0,
              per_source: bool = False, weights=None) -> MemmModel:
    index = FeatureIndex(alphabet.size, features.s1, features.s2, per_source=per_source)
    if weights is None:
        weights = np.zeros(index.K)
    return MemmModel(weights, features, index, alphabet, sigma)


def _local_scores(weights, index: FeatureIndex, H):
    """Unnormalized local scores for batched contexts ``H`` (..., N, 5s).

    Returns ``(z0, z)``: START scores (..., L) at the first position and
    transition scores (..., N-1, L, L) indexed ``[prev, curr]``.
    """
    w_obs, w_trans = index.split(weights)
    if index.per_source:
        U = np.einsum("...d,sld->...sl", H, w_obs)  # (..., N, S, L)
        z0 = U[..., 0, 0, :]
        z = U[..., 1:, 1:, :] + w_trans
    else:
        U = H @ w_obs[0].T  # (..., N, L)
        z0 = U[..., 0, :]
        z = U[..., 1:, None, :] + w_trans
    return z0, z


def _log_local(weights, index, H):
    z0, z = _local_scores(weights, index, H)
    return (z0 - chain.logsumexp(z0, axis=-1)[..., None],
            z - chain.logsumexp(z, axis=-1)[..., None])


def local_table(model: MemmModel, x) -> chain.PotentialTable:
    """Table of local log-probabilities ``log p(y_t | Omega_t, y_{t-1})``."""
    H = context_matrix(x.obs if hasattr(x, "obs") else x, model.features)
    lp0, lp = _log_local(model.weights, model.index, H)
    return chain.PotentialTable(lp0, lp)


def local_distribution(model: MemmModel, x, t: int, y_prev=None) -> np.ndarray:
    """``p(. | Omega_t, y_prev)``; ``y_prev`` must be None (START) iff t == 0."""
    pot = local_table(model, x)
    if t == 0:
        if y_prev is not None:
            raise ValueError("position 0 has the START source")
        return np.exp(pot.unary1)
    if y_prev is None:
        raise ValueError("START source is only defined at position 0")
    return np.exp(pot.pairwise[t - 1, y_prev])


class _Corpus:
    def __init__(self, dataset, features: FeatureConfig, index: FeatureIndex):
        L = index.n_labels
        Hs = [context_matrix(seq.obs, features) for seq in dataset]
        masks = [label_mask(seq.labels, L) for seq in dataset]
        self.H, self.lengths = chain.pad_batch(Hs)
        self.mask, _ = chain.pad_batch(masks, fill=True)


def _penalty(weights, sigma):
    return float(weights @ weights) / (2 * sigma ** 2)


def _clamped(weights, index, corpus, marginals):
    lp0, lp = _log_local(weights, index, corpus.H)
    return chain.batch_posteriors(lp0, lp, corpus.mask, corpus.lengths, marginals=marginals)


def incomplete_loglik(model: MemmModel, dataset, sigma: float | None = None) -> float:
    """Penalized ``sum_seq log p(v | x)``; pass ``sigma=float('inf')`` for none."""
    sigma = model.sigma if sigma is None else sigma
    corpus = _Corpus(dataset, model.features, model.index)
    return float(np.sum(_clamped(model.weights, model.index, corpus, False))) - _penalty(
        model.weights, sigma)


def sequence_loglik(model: MemmModel, seq) -> float:
    mask = label_mask(seq.labels, model.index.n_labels)
    return chain.log_partition(local_table(model, seq), mask)


class ExpectedObjective:
    """M-step objective ``Q(lam_old, lam) - ||lam||^2 / (2 sigma^2)``.

    Built from the clamped posteriors at ``lam_old``: the first-position
    marginals weight the START distribution and pairwise marginals weight
    each transition distribution.
    """

    def __init__(self, weights_old, index: FeatureIndex, corpus: _Corpus, sigma: float):
        self.index = index
        self.corpus = corpus
        self.sigma = sigma
        log_Z, mu, xi = _clamped(weights_old, index, corpus, True)
        self.q0 = mu[:, 0]
        self.xi = xi
        self.prev = xi.sum(axis=-1)  # marginal of the source state, (B, N-1, L)

    def __call__(self, weights):
        weights = np.asarray(weights, dtype=float)
        lp0, lp = _log_local(weights, self.index, self.corpus.H)
        value = float(np.sum(self.q0 * lp0) + np.sum(self.xi * lp)) - _penalty(weights, self.sigma)
        r0 = self.q0 - np.exp(lp0)
        r = self.xi - self.prev[..., None] * np.exp(lp)
        H = self.corpus.H
        L = self.index.n_labels
        if self.index.per_source:
            g_obs = np.empty((self.index.n_sources, L, self.index.n_obs))
            g_obs[0] = r0.T @ H[:, 0]
            g_obs[1:] = np.einsum("btjl,btd->jld", r, H[:, 1:])
        else:
            g_obs = (r0.T @ H[:, 0] + np.einsum("btl,btd->ld", r.sum(axis=2), H[:, 1:]))[None]
        g_trans = r.sum(axis=(0, 1))
        grad = np.concatenate([g_obs.ravel(), g_trans.ravel()]) - weights / self.sigma ** 2
        return value, grad


def em_step(model: MemmModel, dataset, config: EmConfig = EmConfig(), corpus=None):
    """One generalized EM iteration.

    Returns ``(new_model, penalized incomplete log-likelihood of new_model)``.
    Raises :class:`EMError` if the M-step cannot improve the expected
    objective; the model is then left at its current weights.
    """
    corpus = corpus or _Corpus(dataset, model.features, model.index)
    Q = ExpectedObjective(model.weights, model.index, corpus, config.sigma)
    q_old = Q(model.weights)[0]
    res = cg_polak_ribiere_maximize(
        Q, model.weights, OptimConfig(max_iter=config.inner_max_iter, tol=config.inner_tol))
    if not res.value > q_old:
        raise EMError(f"M-step failed to improve the expected objective ({res.status})")
    new = model.with_weights(res.x)
    ll = float(np.sum(_clamped(res.x, model.index, corpus, False))) - _penalty(res.x, config.sigma)
    return new, ll


def train(dataset, alphabet: LabelAlphabet, config: EmConfig = EmConfig(),
          features: FeatureConfig | None = None, per_source: bool = False) -> MemmModel:
    """EM from all-zero weights until the relative change of the penalized
    incomplete log-likelihood drops below ``config.tol``."""
    if len(dataset) == 0:
        raise EMError("empty training set")
    features = features or FeatureConfig()
    if not features.fitted:
        features = fit_normalization(dataset, features)
    for seq in dataset:
        seq.validate(alphabet.size)
    model = new_model(alphabet, features, config.sigma, per_source)
    corpus = _Corpus(dataset, features, model.index)
    if corpus.mask.all():
        raise EMError("no visible labels: the objective is constant")
    ll = float(np.sum(_clamped(model.weights, model.index, corpus, False)))
    trace = [ll]
    status = "max_iter"
    for _ in range(config.max_iter):
        try:
            model, ll_new = em_step(model, dataset, config, corpus)
        except EMError as exc:
            log.info("EM stopped: %s", exc)
            status = "no_improvement"
            break
        trace.append(ll_new)
        rel = abs(ll_new - ll) / max(abs(ll), abs(ll_new), 1.0)
        ll = ll_new
        if rel < config.tol:
            status = "converged"
            break
    log.info("MEMM EM: %s after %d iterations, objective %.6f", status, len(trace) - 1, ll)
    return model.with_weights(model.weights, {"status": status, "iterations": len(trace) - 1,
                                              "objective": ll, "history": trace})


def segment(model: MemmModel, x, constraint=None) -> list:
    pot = local_table(model, x)
    return chain.viterbi(pot, as_constraint(constraint, pot.n_labels))
