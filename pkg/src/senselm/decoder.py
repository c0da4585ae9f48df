"""Toy autoregressive decoder.

Consumes projected multimodal tokens as a prefix, then instruction text and
answer tokens under a causal mask. Prefix tokens are mutually visible (no
causal mask among them); text positions see the whole prefix plus their own
past. Greedy decoding only.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import TruncationError, VocabError
from .nn import (Embedding, LayerNorm, Linear, Module, TransformerBlock,
                 sinusoidal_positions)
from .tensor import Tensor, log_softmax
from .text import EOS, PAD, SEP, text_anchor


@dataclass
class DecoderConfig:
    layers: int = 2
    d_llm: int = 128
    heads: int = 4
    max_len: int = 256
    vocab_size: int = 0  # filled from the built vocabulary


_MASK_CACHE: dict = {}


def prefix_causal_mask(prefix_len: int, total_len: int, dtype) -> np.ndarray:
    """Additive mask: causal overall, but positions < prefix_len see each other."""
    key = (prefix_len, total_len, np.dtype(dtype).str)
    hit = _MASK_CACHE.get(key)
    if hit is not None:
        return hit
    mask = np.full((total_len, total_len), -np.inf, dtype=dtype)
    mask[np.tril_indices(total_len)] = 0.0
    mask[:prefix_len, :prefix_len] = 0.0
    mask.setflags(write=False)
    _MASK_CACHE[key] = mask
    return mask


class ActionDecoder(Module):
    def __init__(self, cfg: DecoderConfig, rng: np.random.Generator):
        if cfg.vocab_size <= 4:
            raise VocabError("decoder needs a non-trivial vocabulary")
        self.cfg = cfg
        self.embed = Embedding(cfg.vocab_size, cfg.d_llm, rng)
        self.blocks = [TransformerBlock(cfg.d_llm, cfg.heads, rng)
                       for _ in range(cfg.layers)]
        self.final_norm = LayerNorm(cfg.d_llm)
        self.lm_head = Linear(cfg.d_llm, cfg.vocab_size, rng, init_scale=0.02)

    def embed_text(self, token_ids: np.ndarray, position_offset: int = 0) -> Tensor:
        """Learned embedding plus fixed sinusoidal positions."""
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.min(initial=0) < 0 or ids.max(initial=-1) >= self.cfg.vocab_size:
            raise VocabError(f"token id outside vocabulary of {self.cfg.vocab_size}")
        emb = self.embed(ids)
        pe = sinusoidal_positions(position_offset + ids.shape[-1], self.cfg.d_llm,
                                  dtype=emb.dtype)[position_offset:]
        return emb + pe

    def decode(self, z_m: Optional[Tensor], token_ids: np.ndarray
               ) -> tuple[Tensor, Tensor]:
        """Run the stack over [Z_m ; text]; returns (text logits, hidden states).

        token_ids: [B, S] (or [S]); logits cover the text positions only.
        """
        ids = np.atleast_2d(np.asarray(token_ids, dtype=np.int64))
        prefix_len = 0 if z_m is None else z_m.shape[-2]
        total = prefix_len + ids.shape[-1]
        if total > self.cfg.max_len:
            raise TruncationError(
                f"sequence of {total} exceeds max length {self.cfg.max_len}")
        text = self.embed_text(ids, position_offset=prefix_len)
        if z_m is None:
            x = text
        else:
            if z_m.ndim == 2 and text.ndim == 3:
                z_m = T.stack([z_m] * text.shape[0])
            pe = sinusoidal_positions(prefix_len, self.cfg.d_llm, dtype=text.dtype)
            x = T.concat([z_m + pe, text], axis=-2)
        mask = prefix_causal_mask(prefix_len, total, x.dtype)
        for block in self.blocks:
            x = block(x, mask=mask)
        hidden = self.final_norm(x)
        text_hidden = hidden[:, prefix_len:, :]
        return self.lm_head(text_hidden), text_hidden

    def pooled_state(self, text_hidden: Tensor, token_ids: np.ndarray) -> Tensor:
        """Hidden state at each sample's final non-pad position."""
        ids = np.atleast_2d(np.asarray(token_ids, dtype=np.int64))
        nonpad = ids != PAD
        last = np.where(nonpad.any(axis=1), nonpad.shape[1] - 1 -
                        np.argmax(nonpad[:, ::-1], axis=1), 0)
        return text_hidden[np.arange(ids.shape[0]), last]

    def instruction_state(self, text_hidden: Tensor, token_ids: np.ndarray) -> Tensor:
        """Hidden state at the first SEP (end of instruction); causality makes
        it identical whether or not answer tokens follow, so classification
        behaves the same under teacher forcing and prompt-only evaluation.
        Falls back to the final non-pad position when no SEP is present."""
        ids = np.atleast_2d(np.asarray(token_ids, dtype=np.int64))
        has_sep = (ids == SEP).any(axis=1)
        sep_pos = np.argmax(ids == SEP, axis=1)
        nonpad = ids != PAD
        last = np.where(nonpad.any(axis=1), nonpad.shape[1] - 1 -
                        np.argmax(nonpad[:, ::-1], axis=1), 0)
        pos = np.where(has_sep, sep_pos, last)
        return text_hidden[np.arange(ids.shape[0]), pos]

    def generate(self, z_m: Optional[Tensor], prompt_ids: list[int],
                 max_new: int) -> list[int]:
        """Greedy decoding (argmax; ties break to the lowest index) until EOS."""
        if not prompt_ids:
            raise VocabError("prompt must be non-empty")
        ids = list(prompt_ids)
        out: list[int] = []
        with T.no_grad():
            for _ in range(max_new):
                logits, _ = self.decode(z_m, np.asarray([ids]))
                nxt = int(np.argmax(logits.data[0, -1]))
                out.append(nxt)
                if nxt == EOS:
                    break
                ids.append(nxt)
        return out


class ActionClassifier(Module):
    """Linear action head over the decoder's pooled state."""

    def __init__(self, d_llm: int, n_classes: int, rng: np.random.Generator):
        self.proj = Linear(d_llm, n_classes, rng, init_scale=0.02)

    def __call__(self, pooled: Tensor) -> Tensor:
        return self.proj(pooled)


def next_token_loss(logits: Tensor, token_ids: np.ndarray,
                    answer_mask: np.ndarray) -> tuple[Optional[Tensor], int]:
    """Mean next-token cross-entropy over positions whose *target* is marked.

    logits[b, i] predicts token_ids[b, i+1]; answer_mask[b, j] marks target
    positions j (the answer span plus EOS). Returns (loss, count); count 0
    means everything was masked out.
    """
    ids = np.atleast_2d(np.asarray(token_ids, dtype=np.int64))
    mask = np.atleast_2d(np.asarray(answer_mask, dtype=bool))
    if mask.shape != ids.shape:
        raise VocabError("answer mask must align with token ids")
    b_idx, t_idx = np.nonzero(mask[:, 1:])
    count = b_idx.size
    if count == 0:
        return None, 0
    ls = log_softmax(logits, axis=-1)
    picked = ls[b_idx, t_idx, ids[b_idx, t_idx + 1]]
    return picked.mean() * -1.0, count


def stage2_loss(decoder: ActionDecoder, classifier: ActionClassifier,
                z_m: Optional[Tensor], token_ids: np.ndarray,
                answer_mask: np.ndarray, action_ids: np.ndarray,
                loss_scale: Optional[tuple[int, int]] = None
                ) -> tuple[Tensor, dict]:
    """Action-classification CE plus next-token CE over answer positions.

    ``loss_scale = (total_samples, total_answer_tokens)`` renormalizes a
    micro-batch so accumulated gradients equal the full-batch gradients.
    The classifier reads the instruction-final (SEP) hidden state.
    """
    logits, text_hidden = decoder.decode(z_m, token_ids)
    pooled = decoder.instruction_state(text_hidden, token_ids)
    cls_logits = classifier(pooled)
    actions = np.atleast_1d(action_ids)
    cls_loss = T.cross_entropy(cls_logits, actions)
    lm_loss, count = next_token_loss(logits, token_ids, answer_mask)
    if lm_loss is None:
        warnings.warn("all next-token targets masked; using classification term only")
        lm_loss = None
    if loss_scale is not None:
        total_b, total_t = loss_scale
        total = cls_loss * (len(actions) / total_b)
        if lm_loss is not None and total_t > 0:
            total = total + lm_loss * (count / total_t)
    else:
        total = cls_loss if lm_loss is None else cls_loss + lm_loss
    stats = {
        "loss": total.item(),
        "cls_loss": cls_loss.item(),
        "lm_loss": 0.0 if lm_loss is None else lm_loss.item(),
        "answer_tokens": count,
        "cls_logits": cls_logits,
    }
    return total, stats


def text_anchor_embed(caption: str, d_m: int) -> Tensor:
    """Caption anchor in the frozen stub-width text space."""
    return Tensor(text_anchor(caption, d_m))
