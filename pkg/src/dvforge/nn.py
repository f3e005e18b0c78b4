"""Policy/value network: record vectorizer, CLS token, post-norm Transformer
encoders without positional encoding, a per-record Bernoulli actor head and a
critic head fed by the CLS output and/or the batch baseline score."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class CriticMode(str, Enum):
    SB = "SB"
    CLS = "CLS"
    CLS_SB = "CLS_SB"

    @classmethod
    def parse(cls, value) -> "CriticMode":
        if isinstance(value, cls):
            return value
        key = str(value).upper().replace("+", "_")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown critic mode {value!r}; expected SB, CLS or CLS_SB") from None


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    model_dim: int = 64
    num_heads: int = 4
    num_layers: int = 4
    ff_hidden_dim: int = 128
    critic_hidden_dim: int = 32

    def __post_init__(self):
        if self.model_dim % self.num_heads:
            raise ValueError(
                f"model_dim={self.model_dim} not divisible by num_heads={self.num_heads}"
            )
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")


class Module:
    """Minimal parameter container; subclasses register Tensors or child Modules."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out[prefix + name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(f"{prefix}{name}."))
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{prefix}{name}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())


class Linear(Module):
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(fan_in)
        self.weight = Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True)
        self.bias = Tensor(rng.uniform(-bound, bound, (fan_out,)), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim == 1:
            return (ad.matmul(x.reshape(1, -1), self.weight) + self.bias).reshape(-1)
        return ad.matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.shift = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.eps) * self.gain + self.shift


class MultiHeadSelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.heads = heads
        self.head_dim = dim // heads
        self.query = Linear(dim, dim, rng)
        self.key = Linear(dim, dim, rng)
        self.value = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor, b: int, t: int) -> Tensor:
        return x.reshape(b, t, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        q = self._split(self.query(x), b, t)
        k = self._split(self.key(x), b, t)
        v = self._split(self.value(x), b, t)
        scores = ad.matmul(q, k.T) * (1.0 / np.sqrt(self.head_dim))
        weights = ad.softmax(scores)
        self.last_weights = weights.data
        ctx = ad.matmul(weights, v).transpose(0, 2, 1, 3).reshape(b, t, d)
        return self.out(ctx)


class EncoderBlock(Module):
    """Post-norm block: LN(x + MHA(x)), then LN(h + FF(h))."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.attn = MultiHeadSelfAttention(cfg.model_dim, cfg.num_heads, rng)
        self.norm1 = LayerNorm(cfg.model_dim)
        self.ff1 = Linear(cfg.model_dim, cfg.ff_hidden_dim, rng)
        self.ff2 = Linear(cfg.ff_hidden_dim, cfg.model_dim, rng)
        self.norm2 = LayerNorm(cfg.model_dim)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.norm1(x + self.attn(x))
        return self.norm2(h + self.ff2(ad.gelu(self.ff1(h))))


class PolicyValueNet(Module):
    def __init__(
        self,
        config: EncoderConfig,
        critic_mode: CriticMode | str = CriticMode.CLS_SB,
        seed: int = 0,
    ):
        rng = np.random.default_rng(seed)
        self.config = config
        self.critic_mode = CriticMode.parse(critic_mode)
        d = config.model_dim
        self.vectorizer = Linear(config.input_dim, d, rng)
        self.cls_token = Tensor(rng.normal(0.0, 0.02, d), requires_grad=True)
        self.encoders = [EncoderBlock(config, rng) for _ in range(config.num_layers)]
        self.actor_head = Linear(d, 1, rng)
        critic_in = {CriticMode.SB: 1, CriticMode.CLS: d, CriticMode.CLS_SB: d + 1}[
            self.critic_mode
        ]
        self.critic_hidden = Linear(critic_in, config.critic_hidden_dim, rng)
        self.critic_out = Linear(config.critic_hidden_dim, 1, rng)

    # -- pieces --------------------------------------------------------------
    def encode(self, records) -> tuple[Tensor, Tensor]:
        """Contextualize records.

        ``records`` is ``(N, input_dim)`` or batched ``(B, N, input_dim)``.
        Returns record embeddings ``(..., N, model_dim)`` and the CLS output
        ``(..., model_dim)`` with the same leading shape as the input.
        """
        x = ad.as_tensor(records)
        single = x.ndim == 2
        if single:
            x = x.reshape(1, *x.shape)
        if x.ndim != 3 or x.shape[-1] != self.config.input_dim:
            raise ad.ShapeError("encode", x.shape, (self.config.input_dim,))
        b = x.shape[0]
        h = self.vectorizer(x)
        cls = ad.broadcast_to(self.cls_token, (b, 1, self.config.model_dim))
        h = ad.concat([cls, h], axis=1)
        for block in self.encoders:
            h = block(h)
        emb, cls_out = h[:, 1:, :], h[:, 0, :]
        if single:
            return emb[0], cls_out[0]
        return emb, cls_out

    def actor_logits(self, embeddings: Tensor) -> Tensor:
        z = self.actor_head(embeddings)
        return z.reshape(z.shape[:-1])

    def actor_probs(self, embeddings: Tensor) -> Tensor:
        return ad.sigmoid(self.actor_logits(embeddings))

    def critic_value(self, cls_embedding: Tensor, baseline_score, mode=None) -> Tensor:
        """Scalar value per state; ``mode`` must match the head built at init."""
        mode = self.critic_mode if mode is None else CriticMode.parse(mode)
        if mode is not self.critic_mode:
            raise ValueError(f"network was built for critic mode {self.critic_mode.value}")
        cls_embedding = ad.as_tensor(cls_embedding)
        lead = cls_embedding.shape[:-1]
        sb = Tensor(np.broadcast_to(np.asarray(baseline_score, dtype=float), lead)[..., None])
        if mode is CriticMode.SB:
            inp = sb
        elif mode is CriticMode.CLS:
            inp = cls_embedding
        else:
            inp = ad.concat([cls_embedding, sb], axis=-1)
        v = self.critic_out(ad.tanh(self.critic_hidden(inp)))
        return v.reshape(lead)

    def forward(self, records, baseline_scores):
        """Returns (logits, values) for a batch of states."""
        emb, cls = self.encode(records)
        return self.actor_logits(emb), self.critic_value(cls, baseline_scores)

    # -- persistence -----------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in params.items():
            if state[k].shape != p.data.shape:
                raise ad.ShapeError(f"load {k}", p.data.shape, state[k].shape)
            p.data[...] = state[k]

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        ad.save_checkpoint(directory / "weights.ckpt", self.named_parameters())
        meta = {"encoder": asdict(self.config), "critic_mode": self.critic_mode.value}
        (directory / "config.json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory: str | Path) -> "PolicyValueNet":
        directory = Path(directory)
        meta = json.loads((directory / "config.json").read_text())
        net = cls(EncoderConfig(**meta["encoder"]), meta["critic_mode"])
        net.load_state_dict(ad.load_checkpoint(directory / "weights.ckpt"))
        return net
