"""Comparison valuators: leave-one-out, exact and truncated Monte-Carlo data
Shapley, a reduced-fidelity REINFORCE valuator in the style of DVRL, and the
validation threshold sweep used to turn value scores into a training subset.

All utilities are validation accuracies from a :class:`SubsetScorer`; a
degenerate coalition (empty, single row or single class) is worth 0.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .env import record_vectors
from .estimator import SubsetScorer
from .nn import Linear, Module


# -- leave-one-out ------------------------------------------------------------------

def loo_values(scorer: SubsetScorer) -> np.ndarray:
    """value_i = v(all) - v(all without i); n + 1 fits."""
    n = len(scorer)
    if n < 3:
        raise ValueError("leave-one-out needs at least 3 records")
    everything = np.arange(n)
    full = scorer.score(everything)
    values = np.empty(n)
    for i in range(n):
        values[i] = full - scorer.score(np.delete(everything, i))
    return values


# -- Shapley -------------------------------------------------------------------------

MAX_EXACT = 10


def exact_shapley(scorer: SubsetScorer) -> np.ndarray:
    """Exact Shapley values by coalition enumeration (n <= 10)."""
    n = len(scorer)
    if n > MAX_EXACT:
        raise ValueError(f"exact Shapley limited to {MAX_EXACT} records, got {n}")
    utility = np.zeros(1 << n)
    members = np.arange(n)
    for bits in range(1, 1 << n):
        utility[bits] = scorer.score(members[[(bits >> i) & 1 == 1 for i in range(n)]])
    weight = [math.factorial(k) * math.factorial(n - k - 1) / math.factorial(n) for k in range(n)]
    values = np.zeros(n)
    for bits in range(1 << n):
        k = bin(bits).count("1")
        for i in range(n):
            if not (bits >> i) & 1:
                values[i] += weight[k] * (utility[bits | (1 << i)] - utility[bits])
    return values


@dataclass(frozen=True)
class ShapleyConfig:
    max_permutations: int = 500
    truncation_tol: float = 0.01
    convergence_tol: float = 1e-3
    convergence_window: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.max_permutations < 1:
            raise ValueError("max_permutations must be >= 1")
        if self.truncation_tol <= 0 or self.convergence_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.convergence_window < 1:
            raise ValueError("convergence_window must be >= 1")


@dataclass
class TmcResult:
    values: np.ndarray
    permutations: int
    converged: bool


def tmc_shapley(scorer: SubsetScorer, config: ShapleyConfig | None = None) -> TmcResult:
    """Permutation sampling with per-permutation truncation.

    A scan stops crediting once the prefix score is within ``truncation_tol``
    of the full-set score; sampling stops when the running means move less
    than ``convergence_tol`` over ``convergence_window`` permutations.
    """
    cfg = config or ShapleyConfig()
    n = len(scorer)
    rng = np.random.default_rng(cfg.seed)
    full = scorer.score(np.arange(n))
    totals = np.zeros(n)
    recent: deque[np.ndarray] = deque(maxlen=cfg.convergence_window + 1)
    converged = False
    t = 0
    while t < cfg.max_permutations:
        t += 1
        perm = rng.permutation(n)
        prev = 0.0
        for j in range(n):
            cur = scorer.score(perm[: j + 1])
            totals[perm[j]] += cur - prev
            prev = cur
            if abs(cur - full) < cfg.truncation_tol:
                break
        recent.append(totals / t)
        if len(recent) == recent.maxlen and np.max(np.abs(recent[-1] - recent[0])) < cfg.convergence_tol:
            converged = True
            break
    return TmcResult(totals / t, t, converged)


# -- DVRL-style REINFORCE valuator ----------------------------------------------------------

@dataclass(frozen=True)
class DvrlConfig:
    hidden_dim: int = 32
    steps: int = 1000
    batch_size: int = 200
    window: int = 10
    lr: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("moving-average window must be >= 1")
        if self.steps < 0 or self.batch_size < 2:
            raise ValueError("steps must be >= 0 and batch_size >= 2")


class MovingAverage:
    def __init__(self, window: int):
        if window < 1:
            raise ValueError("window must be >= 1")
        self._buf: deque[float] = deque(maxlen=window)

    def __len__(self) -> int:
        return len(self._buf)

    def push(self, value: float) -> None:
        self._buf.append(float(value))

    @property
    def value(self) -> float:
        return float(np.mean(self._buf)) if self._buf else 0.0


class _ValueNet(Module):
    def __init__(self, input_dim: int, hidden: int, rng):
        self.hidden = Linear(input_dim, hidden, rng)
        self.out = Linear(hidden, 1, rng)

    def logits(self, x) -> ad.Tensor:
        z = self.out(ad.tanh(self.hidden(x)))
        return z.reshape(z.shape[:-1])


@dataclass
class DvrlResult:
    values: np.ndarray
    scores: list[float] = field(default_factory=list)


def dvrl_lite(scorer: SubsetScorer, config: DvrlConfig | None = None) -> DvrlResult:
    """Reduced-fidelity REINFORCE valuator.

    Records are scored independently by a small feed-forward net; the reward
    of a sampled selection is its validation score minus the moving average
    of recent scores. The inner model is refit from scratch every step.
    """
    cfg = config or DvrlConfig()
    rng = np.random.default_rng(cfg.seed)
    vectors = record_vectors(scorer.X, scorer.y, scorer.num_classes)
    mu, sd = vectors.mean(axis=0), vectors.std(axis=0)
    sd[sd == 0] = 1.0
    vectors = (vectors - mu) / sd
    net = _ValueNet(vectors.shape[1], cfg.hidden_dim, rng)
    opt = ad.Adam(net.parameters(), lr=cfg.lr)
    baseline = MovingAverage(cfg.window)
    n = len(scorer)
    size = min(cfg.batch_size, n)
    scores = []
    for _ in range(cfg.steps):
        idx = rng.choice(n, size=size, replace=False)
        logits = net.logits(vectors[idx])
        probs = ad._sigmoid(logits.data)
        mask = rng.random(size) < probs
        score = scorer.score(idx[mask])
        reward = score - (baseline.value if len(baseline) else score)
        baseline.push(score)
        scores.append(score)
        sign = np.where(mask, 1.0, -1.0)
        loss = -reward * ad.mean(ad.log_sigmoid(logits * sign))
        opt.zero_grad()
        loss.backward()
        opt.step()
    with ad.no_grad():
        values = ad._sigmoid(net.logits(vectors).data)
    return DvrlResult(values, scores)


# -- threshold sweep ------------------------------------------------------------------------

@dataclass
class SweepResult:
    thresholds_tried: list[float]
    val_scores: list[float]
    best_threshold: float
    final_test_score: float
    selected: np.ndarray

    @property
    def best_val_score(self) -> float:
        return max(self.val_scores)


def sweep_thresholds(values: np.ndarray, num: int = 21) -> np.ndarray:
    return np.unique(np.quantile(np.asarray(values, float), np.linspace(0.0, 1.0, num)))


def threshold_sweep(
    values: np.ndarray,
    scorer: SubsetScorer,
    test: tuple[np.ndarray, np.ndarray],
    num: int = 21,
) -> SweepResult:
    """Keep records with value >= threshold for each quantile threshold.

    The smallest candidate (the minimum value) keeps every record, so the best
    validation score never falls below the unfiltered baseline.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != (len(scorer),):
        raise ValueError(f"{values.size} values for {len(scorer)} training records")
    thresholds = sweep_thresholds(values, num)
    scores = [scorer.score(np.flatnonzero(values >= thr)) for thr in thresholds]
    best = int(np.argmax(scores))  # first maximum == smallest threshold
    chosen = np.flatnonzero(values >= thresholds[best])
    test_score = scorer.score_on(chosen, *test)
    return SweepResult(
        [float(t) for t in thresholds], [float(s) for s in scores], float(thresholds[best]),
        float(test_score), chosen,
    )
