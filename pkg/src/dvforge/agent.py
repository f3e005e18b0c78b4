"""PPO specialised to one-step episodes (gamma = 0).

With no trajectory the advantage collapses to ``r - V(s)``. The clipped
surrogate is applied per record decision and averaged, because a joint
likelihood ratio over hundreds of Bernoulli actions under/overflows.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .env import StateBatch, ValuationEnv, record_vectors
from .nn import CriticMode, PolicyValueNet

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-7


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, dump: dict):
        self.dump = dump
        super().__init__(f"{message}\n{json.dumps(dump, indent=2, default=str)}")


@dataclass(frozen=True)
class AgentConfig:
    clip_epsilon: float = 0.2
    c1: float = 0.5
    c2: float = 1e-3
    gamma: float = 0.0
    lam: float = 0.95
    lr: float = 3e-4
    total_steps: int = 100_000
    train_batch: int = 64
    epochs_per_update: int = 4
    rollout_size: int = 16
    critic_mode: str = "CLS_SB"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must be in (0, 1)")
        if self.c1 < 0 or self.c2 < 0:
            raise ValueError("c1 and c2 must be non-negative")
        if self.gamma != 0.0:
            raise ValueError("bandit mode requires gamma == 0")
        if min(self.train_batch, self.epochs_per_update, self.rollout_size) < 1:
            raise ValueError("train_batch, epochs_per_update and rollout_size must be >= 1")
        CriticMode.parse(self.critic_mode)


@dataclass(frozen=True)
class SelectionMask:
    mask: np.ndarray  # bool, (..., N)
    logprobs: np.ndarray  # log-prob of each taken decision
    probs: np.ndarray

    @property
    def joint_logprob(self) -> np.ndarray:
        return self.logprobs.sum(axis=-1)


@dataclass(frozen=True)
class RolloutSample:
    state: StateBatch
    mask: np.ndarray
    old_logprobs: np.ndarray
    reward: float
    value: float
    advantage: float


@dataclass
class ValueReport:
    method: str
    values: np.ndarray
    per_pass: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    def selection(self, threshold: float = 0.5) -> np.ndarray:
        return self.values > threshold


@dataclass
class TrainedAgent:
    net: PolicyValueNet
    config: AgentConfig
    env_steps: int = 0


# -- action sampling ------------------------------------------------------------------

def bernoulli_logprobs(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    sign = np.where(mask, 1.0, -1.0)
    z = sign * logits
    return np.minimum(z, 0.0) - np.log1p(np.exp(-np.abs(z)))


def select(probs: np.ndarray, rng: np.random.Generator | None, deterministic: bool = False,
           logits: np.ndarray | None = None) -> SelectionMask:
    """Sample independent Bernoulli decisions (or threshold at 0.5)."""
    probs = np.asarray(probs, dtype=float)
    if deterministic:
        mask = probs > 0.5
    else:
        mask = rng.random(probs.shape) < probs
    if logits is None:
        p = np.clip(probs, 0.0, 1.0)
        with np.errstate(divide="ignore"):
            lp = np.where(mask, np.log(p), np.log1p(-p))
    else:
        lp = bernoulli_logprobs(logits, mask)
    return SelectionMask(mask, lp, probs)


def act(net: PolicyValueNet, state: StateBatch, rng: np.random.Generator | None = None,
        deterministic: bool = False) -> SelectionMask:
    with ad.no_grad():
        emb, _ = net.encode(state.vectors)
        logits = net.actor_logits(emb).data
    return select(ad._sigmoid(logits), rng, deterministic, logits)


# -- advantage estimation ----------------------------------------------------------------

def generalized_advantage_estimate(deltas, gamma: float, lam: float) -> np.ndarray:
    """Reverse recursion A_t = delta_t + gamma * lam * A_{t+1}."""
    deltas = np.asarray(deltas, dtype=float)
    if deltas.size < 1:
        raise ValueError("need at least one delta")
    out = np.empty_like(deltas)
    acc = 0.0
    for t in range(deltas.size - 1, -1, -1):
        acc = deltas[t] + gamma * lam * acc
        out[t] = acc
    return out


# -- losses ------------------------------------------------------------------------------

def policy_loss(new_logprobs, old_logprobs, advantage, clip_epsilon: float) -> Tensor:
    """Negated clipped surrogate, averaged over records and samples.

    ``new_logprobs``/``old_logprobs`` are (B, N) (or (N,)); ``advantage`` is one
    value per sample, broadcast across that sample's records.
    """
    new_lp = ad.as_tensor(new_logprobs)
    old = np.asarray(old_logprobs, dtype=float).reshape(new_lp.shape)
    adv = np.asarray(advantage, dtype=float)
    adv = adv.reshape(adv.shape + (1,) * (new_lp.ndim - adv.ndim))
    ratio = ad.exp(new_lp - old)
    bad = ~np.isfinite(ratio.data)
    if bad.any():
        where = np.argwhere(bad)[0]
        raise FloatingPointError(f"non-finite probability ratio in sample {tuple(int(i) for i in where)}")
    t1 = ratio * adv
    t2 = ad.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * adv
    return -ad.mean(ad.minimum(t1, t2))


def value_loss(value, reward) -> Tensor:
    v = ad.as_tensor(value)
    diff = v - np.asarray(reward, dtype=float).reshape(v.shape)
    return ad.mean(diff * diff)


def entropy_bonus(probs) -> Tensor:
    """Mean Bernoulli entropy of the per-record selection probabilities."""
    p = ad.clip(ad.as_tensor(probs), PROB_FLOOR, 1.0 - PROB_FLOOR)
    q = 1.0 - p
    return ad.mean(-(p * ad.log(p)) - q * ad.log(q))


def total_loss(policy, value, entropy, c1: float, c2: float) -> Tensor:
    return ad.as_tensor(policy) + c1 * ad.as_tensor(value) - c2 * ad.as_tensor(entropy)


# -- training ------------------------------------------------------------------------------

def _stack(states: list[StateBatch]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([s.vectors for s in states]), np.array([s.baseline_score for s in states])


def collect_rollout(net: PolicyValueNet, env: ValuationEnv, count: int,
                    rng: np.random.Generator) -> list[RolloutSample]:
    states = [env.sample_state(rng) for _ in range(count)]
    vectors, baselines = _stack(states)
    with ad.no_grad():
        logits, values = net.forward(vectors, baselines)
    sel = select(ad._sigmoid(logits.data), rng, False, logits.data)
    samples = []
    for i, state in enumerate(states):
        outcome = env.step(state, sel.mask[i])
        reward = outcome.reward * env.reward_scale
        value = float(values.data[i])
        samples.append(RolloutSample(state, sel.mask[i], sel.logprobs[i], reward, value, reward - value))
    return samples


def _update_losses(net, cfg: AgentConfig, batch: list[RolloutSample]):
    vectors, baselines = _stack([s.state for s in batch])
    masks = np.stack([s.mask for s in batch])
    old_lp = np.stack([s.old_logprobs for s in batch])
    adv = np.array([s.advantage for s in batch])
    rewards = np.array([s.reward for s in batch])

    logits, values = net.forward(vectors, baselines)
    sign = np.where(masks, 1.0, -1.0)
    new_lp = ad.log_sigmoid(logits * sign)
    pl = policy_loss(new_lp, old_lp, adv, cfg.clip_epsilon)
    vl = value_loss(values, rewards)
    ent = entropy_bonus(ad.sigmoid(logits))
    ratio = np.exp(new_lp.data - old_lp)
    clipped = float(np.mean(np.abs(ratio - 1.0) > cfg.clip_epsilon))
    return total_loss(pl, vl, ent, cfg.c1, cfg.c2), pl, vl, ent, clipped


def train(
    env: ValuationEnv,
    net: PolicyValueNet,
    config: AgentConfig,
    log_stream: IO[str] | None = None,
) -> tuple[TrainedAgent, list[dict]]:
    """Alternate rollout collection under frozen weights with clipped PPO epochs."""
    if net.critic_mode is not CriticMode.parse(config.critic_mode):
        raise ValueError("network critic head does not match config.critic_mode")
    if net.config.input_dim != env.input_dim:
        raise ad.ShapeError("train", (net.config.input_dim,), (env.input_dim,))
    rng = np.random.default_rng(config.seed)
    opt = ad.Adam(net.parameters(), lr=config.lr)
    history: list[dict] = []
    steps = 0
    while steps < config.total_steps:
        count = min(config.rollout_size, config.total_steps - steps)
        rollout = collect_rollout(net, env, count, rng)
        steps += count
        stats = {"policy_loss": [], "value_loss": [], "entropy": [], "clip_fraction": []}
        mb = min(config.train_batch, count)
        for _ in range(config.epochs_per_update):
            order = rng.permutation(count)
            for start in range(0, count, mb):
                batch = [rollout[i] for i in order[start : start + mb]]
                loss, pl, vl, ent, clipped = _update_losses(net, config, batch)
                if not np.isfinite(loss.data):
                    raise TrainingDiverged(
                        "non-finite loss",
                        {"step": steps, "policy_loss": float(pl.data), "value_loss": float(vl.data),
                         "entropy": float(ent.data), "rewards": [s.reward for s in batch]},
                    )
                opt.zero_grad()
                loss.backward()
                opt.step()
                stats["policy_loss"].append(float(pl.data))
                stats["value_loss"].append(float(vl.data))
                stats["entropy"].append(float(ent.data))
                stats["clip_fraction"].append(clipped)
        entry = {
            "step": steps,
            "mean_reward": float(np.mean([s.reward for s in rollout])),
            **{k: float(np.mean(v)) for k, v in stats.items()},
        }
        history.append(entry)
        if log_stream is not None:
            log_stream.write(json.dumps(entry, sort_keys=True) + "\n")
        if len(history) % 100 == 0:
            log.info("step %d mean_reward %.4f entropy %.4f", steps, entry["mean_reward"], entry["entropy"])
    return TrainedAgent(net, config, steps), history


def score_records(
    agent: TrainedAgent | PolicyValueNet,
    features: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    state_size: int,
    passes: int = 5,
    rng: np.random.Generator | None = None,
) -> ValueReport:
    """Mean in-context selection probability of every record over ``passes`` shuffles.

    Each pass partitions a fresh permutation into consecutive state-sized
    batches; the last batch may be smaller, and a dataset smaller than
    ``state_size`` is scored as one batch.
    """
    if passes < 1:
        raise ValueError("passes must be >= 1")
    net = agent.net if isinstance(agent, TrainedAgent) else agent
    rng = rng or np.random.default_rng(0)
    vectors = record_vectors(np.asarray(features, float), np.asarray(labels, np.int64), num_classes)
    m = vectors.shape[0]
    size = min(state_size, m)
    per_pass = np.empty((passes, m))
    with ad.no_grad():
        for p in range(passes):
            order = rng.permutation(m)
            for start in range(0, m, size):
                idx = order[start : start + size]
                emb, _ = net.encode(vectors[idx])
                per_pass[p, idx] = net.actor_probs(emb).data
    return ValueReport(
        "rlboost", per_pass.mean(axis=0), per_pass, {"passes": passes, "state_size": size}
    )


def config_dict(config: AgentConfig) -> dict:
    return asdict(config)


def write_log(path: str | Path, history: list[dict]) -> None:
    with open(path, "w") as fh:
        for entry in history:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
