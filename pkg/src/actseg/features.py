"""Observation features and the dense feature index shared by CRF and MEMM.

Each position ``t`` of a trajectory yields the raw vector
``g(x, t) = (X, Y, u_X, u_Y, speed)``.  After z-scoring, the context window
``t - s1 .. t + s2`` (clamped at the sequence ends) is stacked into a row of
``5 * s`` values, ``s = s1 + s2 + 1``.  State-observation features pair that
row with the current label; state-transition features are indicators of
``(previous label, current label)``.

Positions are 0-based throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

N_RAW = 5
START = None


def raw_observation_features(coords, w: int = 4) -> np.ndarray:
    """Return the (T, 5) matrix of raw features for a (T, 2) trajectory.

    Velocities are averaged over ``w`` positions: ``(X[t+w/2] - X[t-w/2]) / w``.
    Near the ends the indices are clamped to ``[0, T-1]`` and the difference
    is divided by the span actually covered.
    """
    xy = np.asarray(coords, dtype=float)
    T = xy.shape[0]
    half = w // 2
    t = np.arange(T)
    hi = np.minimum(t + half, T - 1)
    lo = np.maximum(t - half, 0)
    span = (hi - lo).astype(float)
    diff = xy[hi] - xy[lo]
    vel = np.divide(diff, span[:, None], out=np.zeros_like(diff), where=span[:, None] > 0)
    speed = np.hypot(vel[:, 0], vel[:, 1])
    return np.column_stack([xy, vel, speed])


@dataclass(frozen=True)
class FeatureConfig:
    w: int = 4
    s1: int = 2
    s2: int = 2
    mean: tuple | None = None
    std: tuple | None = None

    def __post_init__(self):
        if self.w < 2 or self.w % 2:
            raise ValueError(f"velocity window must be an even positive integer, got {self.w}")
        if self.s1 < 0 or self.s2 < 0:
            raise ValueError("context sizes must be non-negative")
        if self.mean is not None:
            object.__setattr__(self, "mean", tuple(float(v) for v in self.mean))
            object.__setattr__(self, "std", tuple(float(v) for v in self.std))
            if len(self.mean) != N_RAW or len(self.std) != N_RAW:
                raise ValueError("normalization arrays must have 5 entries")
            if min(self.std) <= 0:
                raise ValueError("normalization stddev must be positive")

    @property
    def s(self) -> int:
        return self.s1 + self.s2 + 1

    @property
    def fitted(self) -> bool:
        return self.mean is not None

    def to_dict(self) -> dict:
        return {"w": self.w, "s1": self.s1, "s2": self.s2,
                "mean": list(self.mean) if self.fitted else None,
                "std": list(self.std) if self.fitted else None}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        return cls(w=int(d["w"]), s1=int(d["s1"]), s2=int(d["s2"]),
                   mean=d.get("mean"), std=d.get("std"))


def fit_normalization(dataset, config: FeatureConfig | None = None) -> FeatureConfig:
    """Population mean and stddev of each raw feature over all positions.

    A dimension with (numerically) zero variance gets stddev 1.
    """
    config = config or FeatureConfig()
    if len(dataset) == 0:
        raise ValueError("cannot fit normalization on an empty dataset")
    raw = np.concatenate([raw_observation_features(_coords(seq), config.w) for seq in dataset])
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)
    std = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 1.0)
    return replace(config, mean=tuple(mean), std=tuple(std))


def _coords(x):
    return x.obs if hasattr(x, "obs") else x


def normalized_features(coords, config: FeatureConfig) -> np.ndarray:
    raw = raw_observation_features(coords, config.w)
    if not config.fitted:
        return raw
    return (raw - np.asarray(config.mean)) / np.asarray(config.std)


def context_matrix(coords, config: FeatureConfig) -> np.ndarray:
    """(T, 5*s) matrix; row t holds the normalized g at t-s1 .. t+s2.

    Column ``(eps + s1) * 5 + (m - 1)`` holds h_m(x, t, eps).
    """
    g = normalized_features(_coords(coords), config)
    T = g.shape[0]
    offsets = np.arange(-config.s1, config.s2 + 1)
    idx = np.clip(np.arange(T)[:, None] + offsets[None, :], 0, T - 1)
    return g[idx].reshape(T, N_RAW * config.s)


class StateObs(NamedTuple):
    label: int
    m: int  # 1..5
    eps: int  # -s1..s2
    source: int | None = None  # per-source MEMM blocks only; None = START


class StateTrans(NamedTuple):
    prev: int
    curr: int


class FeatureIndex:
    """Bijection between feature descriptors and dense weight indices.

    Layout: state-observation block(s) first, ``[source][label][eps][m]``
    in row-major order, followed by the ``|Y| x |Y|`` transition block.
    With ``per_source=False`` there is one shared observation block and
    ``K = 5 s |Y| + |Y|^2``.  With ``per_source=True`` (MEMM only) there is
    one block per source state plus one for START.
    """

    def __init__(self, n_labels: int, s1: int = 2, s2: int = 2, per_source: bool = False):
        if n_labels < 1:
            raise ValueError("n_labels must be positive")
        self.n_labels = n_labels
        self.s1 = s1
        self.s2 = s2
        self.per_source = per_source
        self.s = s1 + s2 + 1
        self.n_sources = n_labels + 1 if per_source else 1
        self.n_obs = N_RAW * self.s
        self.obs_size = self.n_sources * n_labels * self.n_obs
        self.K = self.obs_size + n_labels * n_labels

    def __len__(self):
        return self.K

    def __eq__(self, other):
        return isinstance(other, FeatureIndex) and (
            self.n_labels, self.s1, self.s2, self.per_source
        ) == (other.n_labels, other.s1, other.s2, other.per_source)

    def _source_block(self, source):
        if not self.per_source:
            return 0
        return 0 if source is None else source + 1

    def state_obs(self, label: int, m: int, eps: int, source: int | None = None) -> int:
        if not (0 <= label < self.n_labels and 1 <= m <= N_RAW and -self.s1 <= eps <= self.s2):
            raise ValueError(f"bad state-observation descriptor {(label, m, eps)}")
        block = self._source_block(source)
        return ((block * self.n_labels + label) * self.s + eps + self.s1) * N_RAW + m - 1

    def state_trans(self, prev: int, curr: int) -> int:
        if not (0 <= prev < self.n_labels and 0 <= curr < self.n_labels):
            raise ValueError(f"bad transition descriptor {(prev, curr)}")
        return self.obs_size + prev * self.n_labels + curr

    def index(self, desc) -> int:
        if isinstance(desc, StateTrans):
            return self.state_trans(*desc)
        return self.state_obs(*desc)

    def descriptor(self, k: int):
        if not 0 <= k < self.K:
            raise IndexError(k)
        if k >= self.obs_size:
            prev, curr = divmod(k - self.obs_size, self.n_labels)
            return StateTrans(prev, curr)
        rest, m0 = divmod(k, N_RAW)
        rest, e = divmod(rest, self.s)
        block, label = divmod(rest, self.n_labels)
        source = None
        if self.per_source:
            source = None if block == 0 else block - 1
        return StateObs(label, m0 + 1, e - self.s1, source)

    def split(self, weights: np.ndarray):
        """Views of ``weights`` as (n_sources, |Y|, 5s) and (|Y|, |Y|)."""
        obs = weights[: self.obs_size].reshape(self.n_sources, self.n_labels, self.n_obs)
        trans = weights[self.obs_size:].reshape(self.n_labels, self.n_labels)
        return obs, trans

    def to_dict(self) -> dict:
        return {"n_labels": self.n_labels, "s1": self.s1, "s2": self.s2,
                "per_source": self.per_source}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureIndex":
        return cls(int(d["n_labels"]), int(d["s1"]), int(d["s2"]), bool(d.get("per_source", False)))


class FeatureVector(NamedTuple):
    indices: np.ndarray
    values: np.ndarray

    def dot(self, weights) -> float:
        return float(np.dot(np.asarray(weights)[self.indices], self.values))


def emit_features(x, t: int, y_prev, y_curr: int, config: FeatureConfig,
                  index: FeatureIndex, context: np.ndarray | None = None) -> FeatureVector:
    """Active features at position ``t`` for the transition ``y_prev -> y_curr``.

    ``y_prev`` is ``START`` (None) at t = 0, where no transition feature
    fires.  ``context`` may pass a precomputed :func:`context_matrix`.
    """
    n = index.n_labels
    if not 0 <= y_curr < n or (y_prev is not None and not 0 <= y_prev < n):
        raise ValueError(f"labels ({y_prev}, {y_curr}) outside alphabet of size {n}")
    if context is None:
        context = context_matrix(x, config)
    if not 0 <= t < context.shape[0]:
        raise ValueError(f"position {t} outside sequence")
    src = y_prev if t > 0 else None
    first = index.state_obs(y_curr, 1, -index.s1, src)
    indices = list(range(first, first + index.n_obs))
    values = list(context[t])
    if t > 0 and y_prev is not None:
        indices.append(index.state_trans(y_prev, y_curr))
        values.append(1.0)
    return FeatureVector(np.asarray(indices, dtype=np.int64), np.asarray(values, dtype=float))


def check_fitted(config: FeatureConfig):
    if not config.fitted:
        raise ValueError("feature normalization has not been fitted")


def contexts(dataset: Sequence, config: FeatureConfig) -> list:
    return [context_matrix(_coords(seq), config) for seq in dataset]
