import numpy as np
import pytest

from actseg.features import FeatureConfig
from actseg.seqdata import LabeledSequence

ACCEPTANCE = {}


def random_mask(rng, T, L, p_visible=0.4, p_subset=0.2):
    """Mixed constraint: visible, hidden or allowed-subset positions."""
    mask = np.ones((T, L), dtype=bool)
    for t in range(T):
        u = rng.random()
        if u < p_visible:
            mask[t] = False
            mask[t, rng.integers(L)] = True
        elif u < p_visible + p_subset and L > 1:
            keep = rng.random(L) < 0.5
            keep[rng.integers(L)] = True
            mask[t] = keep
    return mask


def random_labels(rng, T, L, p_visible=0.4, p_subset=0.2):
    labels = []
    for _ in range(T):
        u = rng.random()
        if u < p_visible:
            labels.append(int(rng.integers(L)))
        elif u < p_visible + p_subset and L > 1:
            labels.append(frozenset(int(i) for i in rng.choice(L, size=2, replace=False)))
        else:
            labels.append(None)
    return labels


def random_sequence(rng, T, L, **kw):
    obs = np.cumsum(rng.normal(0, 0.3, size=(T, 2)), axis=0) + 2.0
    return LabeledSequence(obs, random_labels(rng, T, L, **kw))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_features():
    """Fitted config with identity normalization, so contexts equal raw values."""
    return FeatureConfig(w=2, s1=0, s2=0, mean=(0.0,) * 5, std=(1.0,) * 5)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, name, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {key:2d}. {name} -- {detail}")
