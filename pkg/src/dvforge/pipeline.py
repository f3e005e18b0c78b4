"""Method runners: turn (dataset with noisy train split, method, params, seed)
into a :class:`RunRecord` with per-record values and filtered test accuracy."""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from . import agent as ag
from . import baselines as bl
from .data import Dataset
from .env import ValuationEnv
from .estimator import LogisticConfig, SubsetScorer, is_degenerate
from .evaluation import RunRecord, roc_auc
from .nn import EncoderConfig, PolicyValueNet

METHODS = ("baseline", "rlboost", "loo", "tmc_shap", "dvrl_lite")


class DegenerateSelection(RuntimeError):
    """A method's final selection cannot train the inner estimator."""


_ENCODER_KEYS = {"model_dim", "num_heads", "num_layers", "ff_hidden_dim", "critic_hidden_dim"}
_AGENT_KEYS = set(ag.AgentConfig.__dataclass_fields__)


def estimator_config(params: dict) -> LogisticConfig:
    keys = LogisticConfig.__dataclass_fields__
    return LogisticConfig(**{k: params[k] for k in keys if k in params})


def _scorer(ds: Dataset, est: LogisticConfig) -> SubsetScorer:
    return SubsetScorer(*ds.train, *ds.validation, est, ds.num_classes)


def _selection_accuracy(scorer: SubsetScorer, keep: np.ndarray, ds: Dataset) -> float:
    idx = np.flatnonzero(keep)
    if is_degenerate(scorer.y[idx]):
        raise DegenerateSelection(f"selection of {idx.size} records cannot be fitted")
    return scorer.score_on(idx, *ds.test)


def run_rlboost(ds: Dataset, params: dict, seed: int, checkpoint_dir=None):
    est = estimator_config(params)
    state_size = int(params.get("state_size", 200))
    env = ValuationEnv(ds.train, ds.validation, state_size, est, ds.num_classes,
                       float(params.get("reward_scale", 1.0)))
    enc = EncoderConfig(env.input_dim, **{k: int(params[k]) for k in _ENCODER_KEYS if k in params})
    cfg = ag.AgentConfig(**{**{k: params[k] for k in _AGENT_KEYS if k in params}, "seed": seed})
    net = PolicyValueNet(enc, cfg.critic_mode, seed=seed)
    trained, history = ag.train(env, net, cfg)
    report = ag.score_records(trained, *ds.train, ds.num_classes, state_size,
                              int(params.get("passes", 5)), np.random.default_rng(seed + 1))
    if checkpoint_dir is not None:
        net.save(checkpoint_dir)
        ag.write_log(Path(checkpoint_dir) / "training_log.jsonl", history)
    keep = report.selection(float(params.get("select_threshold", 0.5)))
    acc = _selection_accuracy(env.scorer, keep, ds)
    return report.values, acc, env.fit_count, {"selected": int(keep.sum())}


def run_method(name: str, ds: Dataset, params: dict | None = None, seed: int = 0,
               noise_rate: float = 0.0, checkpoint_dir: str | Path | None = None) -> RunRecord:
    params = dict(params or {})
    est = estimator_config(params)
    t0 = time.perf_counter()
    if name == "baseline":
        scorer = _scorer(ds, est)
        values = np.ones(len(scorer))
        acc = scorer.score_on(np.arange(len(scorer)), *ds.test)
        fits, extra = scorer.fit_count, {}
    elif name == "rlboost":
        values, acc, fits, extra = run_rlboost(ds, params, seed, checkpoint_dir)
    elif name in ("loo", "tmc_shap"):
        scorer = _scorer(ds, est)
        if name == "loo":
            values = bl.loo_values(scorer)
            extra = {}
        else:
            keys = bl.ShapleyConfig.__dataclass_fields__
            cfg = bl.ShapleyConfig(**{**{k: params[k] for k in keys if k in params}, "seed": seed})
            res = bl.tmc_shapley(scorer, cfg)
            values = res.values
            extra = {"permutations": res.permutations, "converged": res.converged}
        sweep = bl.threshold_sweep(values, scorer, ds.test)
        acc = sweep.final_test_score
        fits = scorer.fit_count
        extra.update(best_threshold=sweep.best_threshold, selected=int(sweep.selected.size))
    elif name == "dvrl_lite":
        scorer = _scorer(ds, est)
        keys = bl.DvrlConfig.__dataclass_fields__
        cfg = bl.DvrlConfig(**{**{k: params[k] for k in keys if k in params}, "seed": seed})
        values = bl.dvrl_lite(scorer, cfg).values
        keep = values > float(params.get("select_threshold", 0.5))
        acc = _selection_accuracy(scorer, keep, ds)
        fits = scorer.fit_count
        extra = {"selected": int(keep.sum())}
    else:
        raise ValueError(f"unknown method {name!r}; expected one of {METHODS}")
    mask = ds.train_noise_mask()
    auc = roc_auc(values, mask).auc if 0 < mask.sum() < mask.size else None
    return RunRecord(name, float(noise_rate), int(seed), float(acc), values,
                     time.perf_counter() - t0, int(fits), mask, auc, extra)
