"""Coarse-to-fine modality-injection projector and the learnable-query
baseline projector used by the ablation arms.

The injection projector pools the universal embeddings into coarse queries,
refines them through L blocks of self-attention, cross-attention over keys
and values derived once from the tailored feature map, and a feedforward,
then projects into the decoder's width.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .modality import ModalityKind
from .nn import (FeedForward, LayerNorm, Linear, Module, MultiHeadAttention,
                 Parameter)
from .tensor import Tensor, adaptive_avg_pool_1d, gelu


@dataclass
class ProjectorConfig:
    n_blocks: int = 2
    d_m: int = 64
    d_llm: int = 128
    heads: int = 4
    n_queries: dict = field(default_factory=dict)  # ModalityKind -> n'_m
    # optional identity-initialized value paths: injected features then enter
    # the query stream in feature coordinates instead of a random rotation
    identity_value_init: bool = False

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ConfigError("projector needs at least one block")
        if self.d_m % self.heads:
            raise ConfigError(f"d_m {self.d_m} not divisible by {self.heads} heads")

    def queries_for(self, kind: ModalityKind) -> int:
        if kind not in self.n_queries:
            raise ConfigError(f"no query count configured for {kind.value}")
        return self.n_queries[kind]


def paper_projector_config(dataset: str = "mmfi") -> ProjectorConfig:
    """Full-scale preset: 8 blocks, 1024 -> 4096, and the published
    per-modality query counts (WiFi differs between the two datasets)."""
    wifi = 16 if dataset == "mmfi" else 256
    return ProjectorConfig(
        n_blocks=8, d_m=1024, d_llm=4096, heads=8,
        n_queries={
            ModalityKind.VIDEO: 64,
            ModalityKind.DEPTH: 64,
            ModalityKind.MMWAVE: 64,
            ModalityKind.INFRARED: 64,
            ModalityKind.LIDAR: 256,
            ModalityKind.WIFI_CSI: wifi,
            ModalityKind.RFID: 16,
        },
    )


class InjectionBlock(Module):
    """SelfAtt -> CrossAtt -> FFN, each pre-normed with a residual path."""

    def __init__(self, d_m: int, heads: int, rng: np.random.Generator):
        self.norm_self = LayerNorm(d_m)
        self.self_attn = MultiHeadAttention(d_m, heads, rng)
        self.norm_cross = LayerNorm(d_m)
        self.cross_attn = MultiHeadAttention(d_m, heads, rng)
        self.norm_ffn = LayerNorm(d_m)
        self.ffn = FeedForward(d_m, rng)

    def __call__(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        h = self.norm_self(q)
        q = q + self.self_attn(h, h, h)
        q = q + self.cross_attn(self.norm_cross(q), k, v)
        q = q + self.ffn(self.norm_ffn(q))
        return q


class OutputMLP(Module):
    """linear -> GELU -> linear mapping d_m into the decoder width."""

    def __init__(self, d_m: int, d_llm: int, rng: np.random.Generator):
        self.up = Linear(d_m, d_llm, rng)
        self.down = Linear(d_llm, d_llm, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(gelu(self.up(x)))


def _identity_init(linear: Linear) -> None:
    w = linear.weight.value.data
    w += np.eye(w.shape[0], w.shape[1], dtype=w.dtype)


class ModalityInjectionProjector(Module):
    def __init__(self, cfg: ProjectorConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.key_proj = Linear(cfg.d_m, cfg.d_m, rng, init_scale=0.02)
        self.value_proj = Linear(cfg.d_m, cfg.d_m, rng, init_scale=0.02)
        self.blocks = [InjectionBlock(cfg.d_m, cfg.heads, rng)
                       for _ in range(cfg.n_blocks)]
        if cfg.identity_value_init:
            _identity_init(self.value_proj)
            for block in self.blocks:
                _identity_init(block.cross_attn.wv)
        self.out_mlp = OutputMLP(cfg.d_m, cfg.d_llm, rng)
        self.kv_calls = 0  # instrumentation: one per forward regardless of depth

    def form_queries(self, y_clip: Tensor, n_out: int) -> Tensor:
        return adaptive_avg_pool_1d(y_clip, n_out)

    def kv_from_features(self, y_t: Tensor) -> tuple[Tensor, Tensor]:
        """Flatten the [.., h, w, d] grid row-major and derive K and V once."""
        self.kv_calls += 1
        *lead, h, w, d = y_t.shape
        if d != self.cfg.d_m:
            raise DimensionError(f"feature width {d} != projector d_m {self.cfg.d_m}")
        rows = y_t.reshape(*lead, h * w, d)
        return self.key_proj(rows), self.value_proj(rows)

    def __call__(self, y_clip: Tensor, y_t: Tensor, n_out: int) -> Tensor:
        if y_clip.shape[-1] != self.cfg.d_m:
            raise DimensionError(
                f"embedding width {y_clip.shape[-1]} != projector d_m {self.cfg.d_m}")
        q = self.form_queries(y_clip, n_out)
        k, v = self.kv_from_features(y_t)
        for block in self.blocks:
            q = block(q, k, v)
        return self.out_mlp(q)


class LearnableQueryProjector(Module):
    """Cross-attention projector with a bank of learnable queries (the
    ablation 'Baseline'); the bank replaces pooled universal embeddings."""

    def __init__(self, cfg: ProjectorConfig, rng: np.random.Generator,
                 n_learnable: int = 30):
        self.cfg = cfg
        self.queries = Parameter(rng.normal(0.0, 0.02, (n_learnable, cfg.d_m)))
        self.key_proj = Linear(cfg.d_m, cfg.d_m, rng, init_scale=0.02)
        self.value_proj = Linear(cfg.d_m, cfg.d_m, rng, init_scale=0.02)
        self.blocks = [InjectionBlock(cfg.d_m, cfg.heads, rng)
                       for _ in range(cfg.n_blocks)]
        self.out_mlp = OutputMLP(cfg.d_m, cfg.d_llm, rng)

    def __call__(self, y: Tensor) -> Tensor:
        """y: [.., n, d_m] token rows (universal embeddings, or flattened
        tailored features in the '+TailoredEncoder' arm)."""
        if y.shape[-1] != self.cfg.d_m:
            raise DimensionError(
                f"input width {y.shape[-1]} != projector d_m {self.cfg.d_m}")
        k = self.key_proj(y)
        v = self.value_proj(y)
        q = self.queries.value
        for block in self.blocks:
            q = block(q, k, v)
        return self.out_mlp(q)


def flatten_grid(y_t: Tensor) -> Tensor:
    """[.., h, w, d] -> [.., h*w, d] row-major, for the tailored ablation arm."""
    *lead, h, w, d = y_t.shape
    return y_t.reshape(*lead, h * w, d)
