"""Labeled trajectory sequences, the on-disk dataset format, synthetic data
generation and label masking.

A position label is one of three things:

* an ``int`` -- a visible label index,
* ``None`` -- a hidden label,
* a ``frozenset`` of ints -- a label known to lie in an allowed subset.

Datasets are plain lists of :class:`LabeledSequence`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

PositionLabel = Union[int, None, frozenset]

HIDDEN = None


class DataError(ValueError):
    """Malformed or inconsistent dataset input."""


class ConfigError(ValueError):
    """Invalid synthetic data configuration."""


@dataclass(frozen=True)
class LabelAlphabet:
    names: tuple

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if not self.names:
            raise ValueError("alphabet must contain at least one label")
        if len(set(self.names)) != len(self.names):
            raise ValueError("label names must be unique")

    @property
    def size(self) -> int:
        return len(self.names)

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def save(self, path):
        Path(path).write_text("".join(f"{n}\n" for n in self.names))

    @classmethod
    def load(cls, path) -> "LabelAlphabet":
        lines = Path(path).read_text().splitlines()
        return cls(tuple(line.strip() for line in lines if line.strip()))


@dataclass(frozen=True, eq=False)
class LabeledSequence:
    obs: np.ndarray
    labels: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        obs = np.array(self.obs, dtype=float)
        if obs.ndim != 2 or obs.shape[1] != 2 or obs.shape[0] < 1:
            raise DataError(f"obs must have shape (T, 2) with T >= 1, got {obs.shape}")
        if not np.all(np.isfinite(obs)):
            raise DataError("coordinates must be finite")
        obs.setflags(write=False)
        labels = tuple(_normalize_label(lab) for lab in self.labels)
        if len(labels) != obs.shape[0]:
            raise DataError(f"{len(labels)} labels for {obs.shape[0]} observations")
        object.__setattr__(self, "obs", obs)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "meta", dict(self.meta))

    def __len__(self):
        return self.obs.shape[0]

    def __eq__(self, other):
        if not isinstance(other, LabeledSequence):
            return NotImplemented
        return (
            np.array_equal(self.obs, other.obs)
            and self.labels == other.labels
            and self.meta == other.meta
        )

    @property
    def n_visible(self) -> int:
        return sum(isinstance(lab, int) for lab in self.labels)

    def truth(self) -> list:
        """Labels as a plain int list; fails unless every position is visible."""
        if any(not isinstance(lab, int) for lab in self.labels):
            raise DataError("sequence has non-visible positions")
        return list(self.labels)

    def validate(self, n_labels: int):
        for t, lab in enumerate(self.labels):
            idx = lab if isinstance(lab, frozenset) else [] if lab is None else [lab]
            for i in idx:
                if not 0 <= i < n_labels:
                    raise DataError(f"label {i} at position {t} outside alphabet of size {n_labels}")


def _normalize_label(lab) -> PositionLabel:
    if lab is None:
        return None
    if isinstance(lab, (bool, np.bool_)):
        raise DataError(f"invalid label {lab!r}")
    if isinstance(lab, (int, np.integer)):
        return int(lab)
    if isinstance(lab, (set, frozenset, list, tuple)):
        s = frozenset(int(i) for i in lab)
        if not s:
            raise DataError("allowed label set must be non-empty")
        return s
    raise DataError(f"invalid label {lab!r}")


def label_mask(labels: Sequence[PositionLabel], n_labels: int) -> np.ndarray:
    """Boolean (T, n_labels) array of allowed labels per position."""
    mask = np.zeros((len(labels), n_labels), dtype=bool)
    for t, lab in enumerate(labels):
        if lab is None:
            mask[t] = True
        elif isinstance(lab, frozenset):
            mask[t, sorted(lab)] = True
        else:
            mask[t, lab] = True
    return mask


def as_constraint(constraint, n_labels: int):
    """Accept None, a boolean (T, L) mask, or a sequence of position labels."""
    if constraint is None:
        return None
    if isinstance(constraint, np.ndarray) and constraint.dtype == bool:
        return constraint
    return label_mask([_normalize_label(lab) for lab in constraint], n_labels)


# ---------------------------------------------------------------------------
# file format


def _label_to_json(lab):
    if isinstance(lab, frozenset):
        return sorted(lab)
    return lab


def save_dataset(dataset: Iterable[LabeledSequence], path):
    with open(path, "w") as fh:
        for seq in dataset:
            rec = {
                "obs": seq.obs.tolist(),
                "labels": [_label_to_json(lab) for lab in seq.labels],
                "meta": seq.meta,
            }
            fh.write(json.dumps(rec) + "\n")


def load_dataset(path, alphabet: LabelAlphabet | None = None) -> list:
    """Read a line-delimited dataset file.

    Blank lines are skipped. Errors name the 1-based line number.
    """
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                seq = LabeledSequence(rec["obs"], rec["labels"], rec.get("meta", {}))
            except (json.JSONDecodeError, KeyError, TypeError, DataError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if alphabet is not None:
                try:
                    seq.validate(alphabet.size)
                except DataError as exc:
                    raise DataError(f"{path}:{lineno}: {exc}") from None
            out.append(seq)
    return out


# ---------------------------------------------------------------------------
# masking


def hidden_count(T: int, rho: float) -> int:
    """round(T * rho) with halves rounded up.

    The small epsilon absorbs binary representation error in rho, so that
    e.g. 25 * 0.3 counts as the tie 7.5.
    """
    return min(T, int(math.floor(T * rho + 0.5 + 1e-9)))


@dataclass(frozen=True)
class MaskSpec:
    rho: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")


def mask_labels(dataset: Sequence[LabeledSequence], spec: MaskSpec) -> list:
    """Hide exactly ``hidden_count(T, rho)`` positions of every sequence.

    Positions are drawn uniformly without replacement; sequence ``i`` uses
    its own child stream of ``spec.seed``, so masking one sequence does not
    depend on the lengths of the others.
    """
    children = np.random.SeedSequence(spec.seed).spawn(len(dataset))
    out = []
    for seq, child in zip(dataset, children):
        labels = list(seq.labels)
        if any(not isinstance(lab, int) for lab in labels):
            raise DataError("mask_labels expects fully visible input")
        n_hide = hidden_count(len(labels), spec.rho)
        rng = np.random.default_rng(child)
        for t in rng.choice(len(labels), size=n_hide, replace=False):
            labels[t] = None
        out.append(LabeledSequence(seq.obs, labels, seq.meta))
    return out


# ---------------------------------------------------------------------------
# synthetic trajectories

# Landmarks of a 4 m x 6 m dining room and kitchen, (x, y) in meters.
LANDMARKS = {
    "door": (0.4, 0.4),
    "tv_chair": (3.4, 1.2),
    "fridge": (0.5, 5.5),
    "stove": (2.0, 5.6),
    "cupboard": (3.5, 5.0),
    "dining_chair": (1.9, 3.0),
}

# Primitive activities, (from, to); activity i has label index i - 1.
ACTIVITIES = {
    1: ("door", "cupboard"),
    2: ("cupboard", "fridge"),
    3: ("fridge", "dining_chair"),
    4: ("dining_chair", "door"),
    5: ("door", "tv_chair"),
    6: ("tv_chair", "cupboard"),
    7: ("fridge", "tv_chair"),
    8: ("tv_chair", "door"),
    9: ("fridge", "stove"),
    10: ("stove", "dining_chair"),
    11: ("fridge", "door"),
    12: ("dining_chair", "fridge"),
}

# Synthetic scenario compositions; each is a connected walk through the room.
SCENARIOS = {
    "SHORT_MEAL": (1, 2, 3, 4),
    "HAVE_SNACK": (5, 6, 2, 7, 8),
    "NORMAL_MEAL": (1, 2, 9, 10, 12, 11),
}

ACTIVITY_ALPHABET = LabelAlphabet(
    tuple(f"{ACTIVITIES[i][0]}->{ACTIVITIES[i][1]}" for i in sorted(ACTIVITIES))
)


@dataclass(frozen=True)
class SynthConfig:
    room: tuple = (4.0, 6.0)
    landmarks: dict = field(default_factory=lambda: dict(LANDMARKS))
    activities: dict = field(default_factory=lambda: dict(ACTIVITIES))
    scenario: str = "SHORT_MEAL"
    template: tuple | None = None
    step_noise: float = 0.2
    steps_per_leg: tuple = (5, 10)
    seed: int = 0

    def resolved_template(self) -> tuple:
        if self.template is not None:
            return tuple(self.template)
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        return SCENARIOS[self.scenario]

    def check(self):
        width, height = self.room
        for name, (x, y) in self.landmarks.items():
            if not (0 <= x <= width and 0 <= y <= height):
                raise ConfigError(f"landmark {name!r} lies outside the room")
        template = self.resolved_template()
        if not template:
            raise ConfigError("empty activity template")
        for act in template:
            if act not in self.activities:
                raise ConfigError(f"unknown activity {act!r}")
            src, dst = self.activities[act]
            for lm in (src, dst):
                if lm not in self.landmarks:
                    raise ConfigError(f"activity {act} references unknown landmark {lm!r}")
            if src == dst:
                raise ConfigError(f"activity {act} must join two distinct landmarks")
        lo, hi = self.steps_per_leg
        if not 1 <= lo <= hi:
            raise ConfigError(f"bad steps_per_leg {self.steps_per_leg}")


def synthesize(config: SynthConfig, n_sequences: int) -> list:
    """Generate noisy piecewise-linear walks following the scenario template.

    Leg ``k`` walks from its source landmark to its target in a random
    number of steps drawn from ``steps_per_leg`` (inclusive), ending on the
    target. Positions carry the visible label of their leg.
    """
    if n_sequences < 1:
        raise ValueError("n_sequences must be >= 1")
    config.check()
    template = config.resolved_template()
    width, height = config.room
    lo, hi = config.steps_per_leg
    rng = np.random.default_rng(config.seed)
    out = []
    for _ in range(n_sequences):
        points, labels = [], []
        for act in template:
            src, dst = config.activities[act]
            a = np.asarray(config.landmarks[src], dtype=float)
            b = np.asarray(config.landmarks[dst], dtype=float)
            n = int(rng.integers(lo, hi + 1))
            frac = np.arange(1, n + 1) / n
            leg = a + frac[:, None] * (b - a)
            points.append(leg)
            labels.extend([act - 1] * n)
        obs = np.concatenate(points)
        if config.step_noise > 0:
            obs = obs + rng.normal(0.0, config.step_noise, size=obs.shape)
        obs[:, 0] = np.clip(obs[:, 0], 0.0, width)
        obs[:, 1] = np.clip(obs[:, 1], 0.0, height)
        meta = {"scenario": config.scenario, "seed": int(config.seed)}
        out.append(LabeledSequence(obs, labels, meta))
    return out
