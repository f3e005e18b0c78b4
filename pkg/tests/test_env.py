import numpy as np
import pytest

from dvforge.data import synthetic_task
from dvforge.env import InsufficientDataError, ValuationEnv, record_vectors
from dvforge.estimator import accuracy, fit


@pytest.fixture(scope="module")
def task():
    return synthetic_task((400, 300, 10), dim=5, separation=2.0, seed=0)


def make_env(task, size=50, labels=None):
    X, y = task.train
    return ValuationEnv((X, y if labels is None else labels), task.validation, size)


class TestState:
    def test_vectors_append_one_hot(self):
        v = record_vectors(np.zeros((3, 2)), np.array([0, 1, 1]), 2)
        np.testing.assert_array_equal(v[:, 2:], [[1, 0], [0, 1], [0, 1]])

    def test_full_size_state_is_permutation(self, task):
        env = make_env(task, 400)
        s = env.sample_state(np.random.default_rng(0))
        np.testing.assert_array_equal(np.sort(s.indices), np.arange(400))

    def test_seeded_state_repeats(self, task):
        env = make_env(task)
        a = env.sample_state(np.random.default_rng(5))
        b = env.sample_state(np.random.default_rng(5))
        np.testing.assert_array_equal(a.indices, b.indices)
        assert a.baseline_score == b.baseline_score

    def test_baseline_matches_direct_fit(self, task):
        env = make_env(task)
        s = env.sample_state(np.random.default_rng(1))
        X, y = task.train
        expected = accuracy(fit(X[s.indices], y[s.indices]), *task.validation)
        assert s.baseline_score == expected

    def test_state_larger_than_train(self, task):
        with pytest.raises(InsufficientDataError):
            make_env(task, 401)


class TestReward:
    def test_identities_on_random_batches(self, task):
        env = make_env(task, 40)
        rng = np.random.default_rng(0)
        for _ in range(100):
            s = env.sample_state(rng)
            assert env.step(s, np.ones(40, bool)).reward == 0.0
            empty = env.step(s, np.zeros(40, bool))
            assert empty.degenerate and empty.reward == -s.baseline_score

    def test_single_class_selection_is_degenerate(self, task):
        env = make_env(task, 40)
        s = env.sample_state(np.random.default_rng(2))
        keep = task.train[1][s.indices] == 1
        out = env.step(s, keep)
        assert out.degenerate and out.reward == -s.baseline_score

    def test_mask_shape_checked(self, task):
        env = make_env(task, 40)
        s = env.sample_state(np.random.default_rng(2))
        with pytest.raises(ValueError):
            env.step(s, np.ones(39, bool))

    def test_clean_oracle_mask_beats_noisy_batch(self, task):
        # corrupt 30% of the batch, all taken from class 1, so the noisy fit's
        # intercept is dragged towards class 0 and validation accuracy drops
        X, y = task.train
        rng = np.random.default_rng(3)
        idx = rng.choice(400, 200, replace=False)
        ones = idx[y[idx] == 1]
        flipped = rng.choice(ones, 60, replace=False)
        noisy = y.copy()
        noisy[flipped] = 0
        env = ValuationEnv((X[idx], noisy[idx]), task.validation, 200)
        s = env.sample_state(rng)
        clean = ~np.isin(idx[s.indices], flipped)
        out = env.step(s, clean)
        assert out.reward > 0
