import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coenet import ValidationError
from coenet.metrics import auc, brier_skill, cohens_kappa, mse_coefficients


class TestKappa:
    def test_perfect(self):
        assert cohens_kappa([1, 0, 1, 0], [1, 0, 1, 0]) == 1.0

    def test_chance(self):
        assert cohens_kappa([1, 0, 1, 0], [1, 1, 0, 0]) == 0.0

    def test_complement(self):
        assert cohens_kappa([0, 0, 1, 1], [1, 1, 0, 0]) == -1.0

    def test_degenerate(self):
        k = cohens_kappa([0, 0, 0], [0, 0, 0])
        assert k == 1.0 and k.degenerate
        k = cohens_kappa([1, 1, 1], [0, 0, 0])
        assert not k.degenerate

    def test_validation(self):
        with pytest.raises(ValidationError):
            cohens_kappa([1, 0], [1, 0, 1])
        with pytest.raises(ValidationError):
            cohens_kappa([2, 0], [1, 0])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=30))
    def test_relabel_invariance_and_range(self, pairs):
        s = np.array([a for a, _ in pairs])
        t = np.array([b for _, b in pairs])
        k = cohens_kappa(s, t)
        assert -1.0 - 1e-12 <= k <= 1.0 + 1e-12
        assert abs(cohens_kappa(~s, ~t) - k) < 1e-12


class TestMSE:
    def test_examples(self):
        assert mse_coefficients([1, 2], [1, 2]) == 0.0
        assert mse_coefficients([0, 0], [1, 1]) == 1.0
        assert mse_coefficients([0.5, 1.5], [1, 1]) == 0.25

    def test_mismatch(self):
        with pytest.raises(ValidationError):
            mse_coefficients([1], [1, 2])


class TestAUC:
    def test_examples(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert auc([0.3] * 4, [0, 1, 0, 1]) == 0.5
        assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75

    def test_single_class(self):
        with pytest.raises(ValidationError):
            auc([0.1, 0.2], [1, 1])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000))
    def test_monotone_invariance_and_pair_count(self, seed):
        rng = np.random.default_rng(seed)
        s = rng.integers(0, 5, 12).astype(float)
        y = np.r_[0, 1, rng.integers(0, 2, 10)]
        a = auc(s, y)
        assert abs(auc(np.exp(3 * s) + 1, y) - a) < 1e-12
        pos, neg = s[y == 1], s[y == 0]
        pairs = (pos[:, None] > neg[None, :]) + 0.5 * (pos[:, None] == neg[None, :])
        assert abs(a - pairs.mean()) < 1e-12


class TestBrierSkill:
    def test_examples(self):
        assert brier_skill([1.0, 0.0, 1.0], [1, 0, 1]) == 1.0
        y = np.array([1, 0, 0, 1, 1])
        assert brier_skill(np.full(5, y.mean()), y) == 0.0
        assert brier_skill([0.9, 0.3], [1, 0]) == pytest.approx(0.8, abs=1e-15)

    def test_negative_when_adversarial(self):
        assert brier_skill([0.0, 1.0], [1, 0]) < 0

    def test_constant_outcomes(self):
        with pytest.raises(ValidationError):
            brier_skill([0.2, 0.4], [1, 1])

    def test_pure(self):
        args = (np.array([0.2, 0.7, 0.4]), np.array([0, 1, 1]))
        assert brier_skill(*args) == brier_skill(*args)
