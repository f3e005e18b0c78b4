"""One-step data-selection environment.

A state is a uniformly sampled batch of training records; the action is a
binary keep-mask over that batch. The reward is the validation accuracy of
the inner estimator fitted on the kept records minus the accuracy of the same
estimator fitted on the whole batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimator import LogisticConfig, SubsetScorer, is_degenerate


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class StateBatch:
    indices: np.ndarray  # (N,) row ids into the training set
    vectors: np.ndarray  # (N, d + num_classes) features with one-hot label
    baseline_score: float

    def __len__(self) -> int:
        return self.indices.size


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    selected_count: int
    selected_score: float
    degenerate: bool


def record_vectors(features: np.ndarray, labels: np.ndarray, num_classes: int) -> np.ndarray:
    onehot = np.zeros((labels.size, num_classes))
    onehot[np.arange(labels.size), labels] = 1.0
    return np.concatenate([features, onehot], axis=1)


class ValuationEnv:
    def __init__(
        self,
        train: tuple[np.ndarray, np.ndarray],
        validation: tuple[np.ndarray, np.ndarray],
        state_size: int = 200,
        estimator: LogisticConfig | None = None,
        num_classes: int | None = None,
        reward_scale: float = 1.0,
    ):
        X, y = train
        self.scorer = SubsetScorer(X, y, *validation, estimator, num_classes)
        self.num_classes = self.scorer.num_classes
        self.state_size = int(state_size)
        self.reward_scale = float(reward_scale)
        self.vectors = record_vectors(self.scorer.X, self.scorer.y, self.num_classes)
        if len(self.scorer) < self.state_size:
            raise InsufficientDataError(
                f"train set has {len(self.scorer)} records, state size is {self.state_size}"
            )

    @property
    def input_dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def fit_count(self) -> int:
        return self.scorer.fit_count

    def sample_state(self, rng: np.random.Generator) -> StateBatch:
        idx = rng.choice(len(self.scorer), size=self.state_size, replace=False)
        return StateBatch(idx, self.vectors[idx], self.scorer.score(idx))

    def step(self, state: StateBatch, mask) -> StepOutcome:
        mask = np.asarray(mask).astype(bool)
        if mask.shape != state.indices.shape:
            raise ValueError(f"mask length {mask.size} != state size {state.indices.size}")
        chosen = state.indices[mask]
        if is_degenerate(self.scorer.y[chosen]):
            return StepOutcome(-state.baseline_score, int(chosen.size), 0.0, True)
        score = self.scorer.score(chosen)
        return StepOutcome(score - state.baseline_score, int(chosen.size), score, False)
