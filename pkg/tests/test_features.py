import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from actseg.features import (FeatureConfig, FeatureIndex, StateObs, StateTrans, context_matrix,
                             emit_features, fit_normalization, normalized_features,
                             raw_observation_features)
from actseg.seqdata import LabeledSequence


class TestRawFeatures:
    def test_constant_trajectory(self):
        g = raw_observation_features(np.full((7, 2), 1.5), w=4)
        np.testing.assert_array_equal(g[:, 2:], 0.0)
        np.testing.assert_array_equal(g[:, :2], 1.5)

    def test_linear_motion(self):
        t = np.arange(10.0)
        g = raw_observation_features(np.column_stack([t, np.zeros(10)]), w=2)
        np.testing.assert_allclose(g[1:-1, 2], 1.0)
        np.testing.assert_allclose(g[1:-1, 4], 1.0)
        np.testing.assert_allclose(g[1:-1, 3], 0.0)

    def test_clamped_ends_use_actual_span(self):
        t = np.arange(10.0)
        g = raw_observation_features(np.column_stack([2 * t, np.zeros(10)]), w=4)
        # every position, interior or clamped, sees slope 2
        np.testing.assert_allclose(g[:, 2], 2.0)

    def test_three_four_five(self):
        xy = np.array([[0.0, 0.0], [3.0, 4.0], [6.0, 8.0]])
        g = raw_observation_features(xy, w=2)
        assert g[1, 2] == 3.0 and g[1, 3] == 4.0
        assert g[1, 4] == 5.0

    def test_single_point(self):
        g = raw_observation_features([[1.0, 2.0]], w=4)
        assert g.tolist() == [[1.0, 2.0, 0.0, 0.0, 0.0]]

    def test_odd_window_rejected(self):
        with pytest.raises(ValueError):
            FeatureConfig(w=3)


class TestNormalization:
    def test_constant_dimension_gets_unit_std(self):
        data = [LabeledSequence(np.full((5, 2), 2.0), [0] * 5)]
        cfg = fit_normalization(data)
        assert cfg.mean[0] == 2.0 and cfg.std[0] == 1.0

    def test_two_value_dimension(self):
        # X = 0 in one sequence and 2 in the other: mean 1, population std 1
        data = [LabeledSequence([[0.0, 0.0]], [0]), LabeledSequence([[2.0, 0.0]], [0])]
        cfg = fit_normalization(data, FeatureConfig(w=2))
        assert cfg.mean[0] == 1.0
        assert cfg.std[0] == 1.0

    def test_refit_on_normalized_data(self, rng):
        data = [LabeledSequence(rng.normal(size=(30, 2)), [0] * 30) for _ in range(3)]
        cfg = fit_normalization(data)
        z = np.concatenate([normalized_features(s.obs, cfg) for s in data])
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(z.std(axis=0), 1.0, atol=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError):
            fit_normalization([])


class TestIndex:
    def test_paper_size(self):
        assert FeatureIndex(12, 2, 2).K == 444

    @pytest.mark.parametrize("L", [1, 2, 5, 12])
    @pytest.mark.parametrize("s1,s2", [(0, 0), (1, 0), (2, 2), (0, 3)])
    def test_size_formula(self, L, s1, s2):
        s = s1 + s2 + 1
        assert FeatureIndex(L, s1, s2).K == 5 * s * L + L * L

    @pytest.mark.parametrize("per_source", [False, True])
    def test_roundtrip_all_descriptors(self, per_source):
        idx = FeatureIndex(3, 1, 2, per_source=per_source)
        seen = set()
        for k in range(idx.K):
            d = idx.descriptor(k)
            assert idx.index(d) == k
            seen.add(d)
        assert len(seen) == idx.K

    def test_descriptor_kinds(self):
        idx = FeatureIndex(2, 0, 0)
        assert idx.descriptor(0) == StateObs(0, 1, 0)
        assert idx.descriptor(idx.K - 1) == StateTrans(1, 1)


class TestEmit:
    def _seq(self, rng, T=9):
        return np.cumsum(rng.normal(size=(T, 2)), axis=0)

    def test_s1_counts(self, rng, unit_features):
        idx = FeatureIndex(3, 0, 0)
        x = self._seq(rng)
        fv = emit_features(x, 4, 1, 2, unit_features, idx)
        assert len(fv.indices) == 6
        assert fv.indices[-1] == idx.state_trans(1, 2)

    def test_first_position_has_no_transition(self, rng):
        cfg = FeatureConfig(s1=2, s2=2, mean=(0.0,) * 5, std=(1.0,) * 5)
        idx = FeatureIndex(12, 2, 2)
        fv = emit_features(self._seq(rng), 0, None, 3, cfg, idx)
        assert len(fv.indices) == 25
        assert np.all(fv.indices < idx.obs_size)

    def test_values_are_clamped_context(self, rng):
        cfg = FeatureConfig(w=2, s1=1, s2=1, mean=(0.0,) * 5, std=(1.0,) * 5)
        idx = FeatureIndex(2, 1, 1)
        x = self._seq(rng, 4)
        g = raw_observation_features(x, 2)
        fv = emit_features(x, 0, None, 1, cfg, idx)
        np.testing.assert_array_equal(fv.values, np.concatenate([g[0], g[0], g[1]]))
        fv = emit_features(x, 3, 0, 1, cfg, idx)
        np.testing.assert_array_equal(fv.values[:-1], np.concatenate([g[2], g[3], g[3]]))

    def test_label_out_of_range(self, rng, unit_features):
        with pytest.raises(ValueError):
            emit_features(self._seq(rng), 1, 0, 3, unit_features, FeatureIndex(3, 0, 0))

    @settings(max_examples=50, deadline=None)
    @given(T=st.integers(1, 12), L=st.integers(1, 5), s1=st.integers(0, 3), s2=st.integers(0, 3),
           data=st.data())
    def test_active_counts_and_range(self, T, L, s1, s2, data):
        rng = np.random.default_rng(data.draw(st.integers(0, 10**6)))
        cfg = FeatureConfig(w=2, s1=s1, s2=s2, mean=(0.0,) * 5, std=(1.0,) * 5)
        idx = FeatureIndex(L, s1, s2)
        x = rng.normal(size=(T, 2))
        t = data.draw(st.integers(0, T - 1))
        y = data.draw(st.integers(0, L - 1))
        prev = None if t == 0 else data.draw(st.integers(0, L - 1))
        fv = emit_features(x, t, prev, y, cfg, idx)
        n_obs = sum(1 for k in fv.indices if k < idx.obs_size)
        assert n_obs == 5 * (s1 + s2 + 1)
        assert np.all(np.diff(fv.indices) > 0)
        assert np.all(fv.indices < idx.K)
        assert np.all(np.isfinite(fv.values))
        again = emit_features(x, t, prev, y, cfg, idx)
        assert np.array_equal(fv.indices, again.indices) and np.array_equal(fv.values, again.values)

    def test_context_matrix_matches_emit(self, rng):
        cfg = FeatureConfig(w=4, s1=2, s2=1, mean=(1.0,) * 5, std=(2.0,) * 5)
        idx = FeatureIndex(2, 2, 1)
        x = self._seq(rng, 6)
        H = context_matrix(x, cfg)
        for t in range(6):
            fv = emit_features(x, t, None if t == 0 else 0, 1, cfg, idx)
            np.testing.assert_array_equal(fv.values[: idx.n_obs], H[t])
