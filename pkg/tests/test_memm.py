import math

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import log_softmax

from actseg import memm
from actseg.chain import log_partition
from actseg.features import FeatureConfig, FeatureIndex, context_matrix
from actseg.optim import grad_check
from actseg.seqdata import (ACTIVITY_ALPHABET, LabelAlphabet, LabeledSequence, SynthConfig,
                            label_mask, synthesize)
from conftest import random_sequence
from oracles import memm_loglik, paths


def alphabet(L):
    return LabelAlphabet(tuple(f"a{i}" for i in range(L)))


def random_model(rng, L=3, s1=1, s2=0, scale=1.0, per_source=False):
    cfg = FeatureConfig(w=2, s1=s1, s2=s2, mean=(2.0,) * 5, std=(1.0,) * 5)
    idx = FeatureIndex(L, s1, s2, per_source=per_source)
    return memm.MemmModel(rng.normal(0, scale, idx.K), cfg, idx, alphabet(L))


def test_zero_weights_uniform(unit_features, rng):
    model = memm.new_model(alphabet(4), unit_features)
    x = rng.normal(size=(5, 2))
    np.testing.assert_allclose(memm.local_distribution(model, x, 0), 0.25)
    np.testing.assert_allclose(memm.local_distribution(model, x, 3, 2), 0.25)


@pytest.mark.parametrize("L", [2, 5, 12])
def test_zero_weights_closed_form(rng, L):
    model = memm.new_model(alphabet(L), FeatureConfig(mean=(0.0,) * 5, std=(1.0,) * 5))
    for _ in range(5):
        seq = random_sequence(rng, int(rng.integers(1, 40)), L, p_subset=0.0)
        assert memm.sequence_loglik(model, seq) == pytest.approx(-seq.n_visible * math.log(L),
                                                                 abs=1e-12)


def test_local_distributions_normalized(rng):
    for _ in range(100):
        model = random_model(rng, L=int(rng.integers(1, 6)), scale=3.0)
        T = int(rng.integers(1, 8))
        x = np.cumsum(rng.normal(size=(T, 2)), axis=0)
        t = int(rng.integers(T))
        prev = None if t == 0 else int(rng.integers(model.index.n_labels))
        p = memm.local_distribution(model, x, t, prev)
        assert np.all(p > 0)
        assert abs(p.sum() - 1.0) < 1e-12


def test_start_source_misuse(rng):
    model = random_model(rng)
    x = rng.normal(size=(3, 2))
    with pytest.raises(ValueError):
        memm.local_distribution(model, x, 0, 1)
    with pytest.raises(ValueError):
        memm.local_distribution(model, x, 2, None)


def test_dominant_weight_wins(unit_features):
    model = memm.new_model(alphabet(3), unit_features)
    w = model.weights.copy()
    w[model.index.state_obs(2, 1, 0)] = 50.0  # label 2 loves large X
    model = model.with_weights(w)
    p = memm.local_distribution(model, np.array([[3.0, 0.0], [3.0, 0.0]]), 1, 0)
    assert int(np.argmax(p)) == 2


@pytest.mark.parametrize("per_source", [False, True])
def test_free_partition_is_zero(rng, per_source):
    for _ in range(10):
        model = random_model(rng, scale=3.0, per_source=per_source)
        x = np.cumsum(rng.normal(size=(int(rng.integers(1, 30)), 2)), axis=0)
        assert abs(log_partition(memm.local_table(model, x))) < 1e-10


@pytest.mark.parametrize("per_source", [False, True])
def test_loglik_matches_enumeration(rng, per_source):
    for _ in range(10):
        model = random_model(rng, per_source=per_source)
        L = model.index.n_labels
        seq = random_sequence(rng, int(rng.integers(1, 6)), L)

        def local(t, prev, y, x=seq.obs):
            return math.log(memm.local_distribution(model, x, t, prev)[y])

        ref = memm_loglik(local, len(seq), L, label_mask(seq.labels, L))
        assert memm.sequence_loglik(model, seq) == pytest.approx(ref, abs=1e-10)


def test_fully_visible_is_sum_of_local_terms(rng):
    model = random_model(rng)
    x = np.cumsum(rng.normal(size=(6, 2)), axis=0)
    y = rng.integers(0, 3, 6).tolist()
    direct = sum(math.log(memm.local_distribution(model, x, t, None if t == 0 else y[t - 1])[y[t]])
                 for t in range(6))
    assert memm.sequence_loglik(model, LabeledSequence(x, y)) == pytest.approx(direct, abs=1e-12)


def test_segment(rng, unit_features):
    model = random_model(rng)
    x = np.cumsum(rng.normal(size=(5, 2)), axis=0)
    pot = memm.local_table(model, x)
    assert memm.segment(model, x) == list(max(paths(5, 3), key=pot.path_score))
    assert memm.segment(model, x, [1, 0, 2, 2, 1]) == [1, 0, 2, 2, 1]
    assert memm.segment(memm.new_model(alphabet(3), unit_features), x) == [0] * 5


def test_expected_objective_gradient(rng):
    for per_source in (False, True):
        model = random_model(rng, per_source=per_source, scale=0.5)
        data = [random_sequence(rng, int(rng.integers(2, 8)), 3) for _ in range(3)]
        corpus = memm._Corpus(data, model.features, model.index)
        Q = memm.ExpectedObjective(model.weights, model.index, corpus, sigma=3.0)
        assert grad_check(Q, rng.normal(0, 0.5, model.index.K)) < 1e-4


def small_hidden_dataset(seed, n=4, L=3):
    rng = np.random.default_rng(seed)
    return [random_sequence(rng, int(rng.integers(4, 12)), L, p_visible=0.4) for _ in range(n)]


@pytest.mark.parametrize("seed", range(5))
def test_em_monotone(seed):
    data = small_hidden_dataset(seed)
    cfg = memm.EmConfig(sigma=5.0, max_iter=20, tol=1e-300)
    model = memm.train(data, alphabet(3), cfg, FeatureConfig(w=2, s1=1, s2=0))
    h = model.info["history"]
    assert h[1] > h[0]
    assert all(b >= a - 1e-9 for a, b in zip(h, h[1:]))
    assert h[-1] == pytest.approx(memm.incomplete_loglik(model, data, 5.0), abs=1e-9)


def test_no_labels_is_an_error():
    with pytest.raises(memm.EMError):
        memm.train([LabeledSequence(np.zeros((3, 2)), [None] * 3)], alphabet(2))


def test_learns_synthetic_data():
    data = synthesize(SynthConfig(scenario="SHORT_MEAL", seed=4), 6)
    model = memm.train(data, ACTIVITY_ALPHABET, memm.EmConfig(max_iter=5))
    pred = np.concatenate([memm.segment(model, s) for s in data])
    truth = np.concatenate([s.labels for s in data])
    assert np.mean(pred == truth) > 0.9


def test_per_source_matches_independent_softmax_fits(rng):
    """With visible labels and source-state indicator features, EM reduces to
    one penalized softmax regression per source state (START, 0, 1)."""
    L, sigma = 2, 2.0
    cfg = FeatureConfig(w=2, s1=0, s2=0, mean=(1.0,) * 5, std=(1.0,) * 5)
    data = []
    for _ in range(6):
        T = int(rng.integers(4, 9))
        x = np.cumsum(rng.normal(0, 0.5, size=(T, 2)), axis=0) + 1.0
        data.append(LabeledSequence(x, rng.integers(0, L, T).tolist()))
    em = memm.EmConfig(sigma=sigma, tol=1e-14, inner_tol=1e-14, inner_max_iter=400, max_iter=20)
    model = memm.train(data, alphabet(L), em, cfg, per_source=True)

    # gather (context, label) pairs by source; source 0 is START
    groups = {j: ([], []) for j in range(L + 1)}
    for s in data:
        H = context_matrix(s.obs, cfg)
        for t in range(len(s)):
            src = 0 if t == 0 else s.labels[t - 1] + 1
            feats = H[t] if t == 0 else np.append(H[t], 1.0)
            groups[src][0].append(feats)
            groups[src][1].append(s.labels[t])

    def fit(X, y):
        X, y = np.array(X), np.array(y)

        def nll(w):
            W = w.reshape(L, -1)
            lp = log_softmax(X @ W.T, axis=1)
            P = np.exp(lp)
            R = P.copy()
            R[np.arange(len(y)), y] -= 1.0
            return -lp[np.arange(len(y)), y].sum() + w @ w / (2 * sigma ** 2), \
                (R.T @ X).ravel() + w / sigma ** 2

        res = minimize(nll, np.zeros(L * X.shape[1]), jac=True, method="BFGS",
                       options={"gtol": 1e-10})
        return res.x.reshape(L, -1)

    refs = {j: fit(*groups[j]) for j in groups}
    probe = np.cumsum(rng.normal(0, 0.5, size=(5, 2)), axis=0) + 1.0
    H = context_matrix(probe, cfg)
    for t in range(5):
        for prev in ([None] if t == 0 else range(L)):
            got = memm.local_distribution(model, probe, t, prev)
            if prev is None:
                want = np.exp(log_softmax(refs[0] @ H[t]))
            else:
                want = np.exp(log_softmax(refs[prev + 1] @ np.append(H[t], 1.0)))
            np.testing.assert_allclose(got, want, atol=1e-6)
