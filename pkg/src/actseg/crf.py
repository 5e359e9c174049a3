"""Partially hidden linear-chain CRF.

The training objective is the penalized incomplete log-likelihood

    sum_seq [log Z_v(x) - log Z(x)] - ||lam||^2 / (2 sigma^2)

where ``Z_v`` sums only over label paths consistent with the visible
labels and allowed sets of the sequence.  Its gradient is the difference
between feature expectations under the clamped and the free chain, minus
``lam / sigma^2``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import chain
from .features import FeatureConfig, FeatureIndex, context_matrix, fit_normalization
from .optim import OptimConfig, cg_polak_ribiere_maximize, lbfgs_maximize
from .seqdata import LabelAlphabet, as_constraint, label_mask

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    sigma: float = 5.0
    tol: float = 1e-5
    max_iter: int = 500
    optimizer: str = "lbfgs"
    memory: int = 7

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.optimizer not in ("lbfgs", "cg"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True, eq=False)
class CrfModel:
    weights: np.ndarray
    features: FeatureConfig
    index: FeatureIndex
    alphabet: LabelAlphabet
    sigma: float = 5.0
    info: dict = field(default_factory=dict, compare=False)

    family = "CRF"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.index.K,):
            raise ValueError(f"expected {self.index.K} weights, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        object.__setattr__(self, "weights", w)

    def with_weights(self, weights) -> "CrfModel":
        return CrfModel(np.asarray(weights, dtype=float), self.features, self.index,
                        self.alphabet, self.sigma)


def new_model(alphabet: LabelAlphabet, features: FeatureConfig, sigma: float = 5.0,
              weights=None) -> CrfModel:
    index = FeatureIndex(alphabet.size, features.s1, features.s2)
    if weights is None:
        weights = np.zeros(index.K)
    return CrfModel(weights, features, index, alphabet, sigma)


def _potentials_from_context(weights, index, H) -> chain.PotentialTable:
    w_obs, w_trans = index.split(weights)
    return chain.PotentialTable.from_unary(H @ w_obs[0].T, w_trans)


def build_potentials(model: CrfModel, x) -> chain.PotentialTable:
    """Log-potential table of ``x``; entry (t, a, b) is ``sum_k lam_k f_k``."""
    H = context_matrix(x.obs if hasattr(x, "obs") else x, model.features)
    return _potentials_from_context(model.weights, model.index, H)


class CrfObjective:
    """Penalized incomplete log-likelihood and gradient over a fixed corpus.

    Contexts and constraint masks are extracted once; calls evaluate all
    sequences as one padded batch.
    """

    def __init__(self, dataset, features: FeatureConfig, index: FeatureIndex, sigma: float):
        self.index = index
        self.sigma = sigma
        L = index.n_labels
        Hs = [context_matrix(seq.obs, features) for seq in dataset]
        masks = [label_mask(seq.labels, L) for seq in dataset]
        self.H, self.lengths = chain.pad_batch(Hs)
        self.mask, _ = chain.pad_batch(masks, fill=True)
        self.free = np.ones_like(self.mask)
        self.n_constrained = int(sum((~m).any() for m in masks))

    def _tables(self, weights):
        w_obs, w_trans = self.index.split(weights)
        U = self.H @ w_obs[0].T
        return U[:, 0], U[:, 1:, None, :] + w_trans[None, None]

    def loglik(self, weights) -> float:
        """Unpenalized incomplete log-likelihood."""
        u, p = self._tables(weights)
        zc = chain.batch_posteriors(u, p, self.mask, self.lengths, marginals=False)
        zf = chain.batch_posteriors(u, p, self.free, self.lengths, marginals=False)
        return float(np.sum(zc - zf))

    def penalty(self, weights) -> float:
        return float(weights @ weights) / (2 * self.sigma ** 2)

    def __call__(self, weights):
        weights = np.asarray(weights, dtype=float)
        u, p = self._tables(weights)
        B = u.shape[0]
        both = chain.batch_posteriors(
            np.concatenate([u, u]), np.concatenate([p, p]),
            np.concatenate([self.mask, self.free]), np.concatenate([self.lengths, self.lengths]))
        log_Z, mu, xi = both
        value = float(np.sum(log_Z[:B] - log_Z[B:])) - self.penalty(weights)
        dmu = mu[:B] - mu[B:]
        dxi = xi[:B] - xi[B:]
        g_obs = np.einsum("btl,btd->ld", dmu, self.H)
        g_trans = dxi.sum(axis=(0, 1))
        grad = np.concatenate([g_obs.ravel(), g_trans.ravel()]) - weights / self.sigma ** 2
        return value, grad


def penalized_incomplete_loglik(model: CrfModel, dataset, sigma: float | None = None) -> float:
    sigma = model.sigma if sigma is None else sigma
    obj = CrfObjective(dataset, model.features, model.index, sigma)
    return obj.loglik(model.weights) - obj.penalty(model.weights)


def gradient(model: CrfModel, dataset, sigma: float | None = None) -> np.ndarray:
    sigma = model.sigma if sigma is None else sigma
    return CrfObjective(dataset, model.features, model.index, sigma)(model.weights)[1]


def sequence_loglik(model: CrfModel, seq) -> float:
    """log p(v | x) of one sequence (no penalty)."""
    pot = build_potentials(model, seq)
    mask = label_mask(seq.labels, model.index.n_labels)
    return chain.log_partition(pot, mask) - chain.log_partition(pot)


def train(dataset, alphabet: LabelAlphabet, config: TrainConfig = TrainConfig(),
          features: FeatureConfig | None = None) -> CrfModel:
    """Fit CRF weights from zero by direct maximization of the objective.

    Feature normalization is fitted on ``dataset`` unless ``features`` is
    already fitted.
    """
    if len(dataset) == 0:
        raise TrainingError("empty training set")
    features = features or FeatureConfig()
    if not features.fitted:
        features = fit_normalization(dataset, features)
    model = new_model(alphabet, features, config.sigma)
    for seq in dataset:
        seq.validate(alphabet.size)
    obj = CrfObjective(dataset, features, model.index, config.sigma)
    if obj.n_constrained == 0:
        raise TrainingError("no visible labels: the objective is constant")
    K = model.index.K
    opt = OptimConfig(memory=config.memory, max_iter=config.max_iter, tol=config.tol,
                      gtol=1e-5 * K)
    run = lbfgs_maximize if config.optimizer == "lbfgs" else cg_polak_ribiere_maximize
    res = run(obj, np.zeros(K), opt)
    log.info("CRF training: %s after %d iterations, objective %.6f",
             res.status, res.iterations, res.value)
    info = {"status": res.status, "iterations": res.iterations, "objective": res.value,
            "history": res.history}
    return CrfModel(res.x, features, model.index, alphabet, config.sigma, info)


def segment(model: CrfModel, x, constraint=None) -> list:
    """Most probable label path, optionally restricted by ``constraint``
    (a (T, |Y|) boolean mask or a sequence of position labels)."""
    pot = build_potentials(model, x)
    return chain.viterbi(pot, as_constraint(constraint, pot.n_labels))

