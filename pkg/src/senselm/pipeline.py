"""Per-modality model assembly: tokenizer, frozen universal stub, tailored
encoder, projector, decoder, and heads, with parameter-group bookkeeping for
the two training stages and the ablation arms.

Arms: 'injection' is the full pipeline; 'baseline' runs the universal stub into a
learnable-query projector; 'tailored' feeds flattened tailored features into
the same learnable-query projector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import DatasetSpec, QASample
from .decoder import ActionClassifier, ActionDecoder, DecoderConfig
from .encoders import (EncoderConfig, Stage1Head, TailoredEncoder,
                       UniversalEncoder, build_tokenizer)
from .errors import ConfigError
from .modality import ModalityKind
from .projector import (LearnableQueryProjector, ModalityInjectionProjector,
                        ProjectorConfig, flatten_grid)
from .seeding import derive_rng
from .tensor import Tensor
from .text import BOS, EOS, PAD, SEP, Vocab

ARMS = ("baseline", "tailored", "injection")


@dataclass
class PipelineConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    projector: ProjectorConfig = field(default_factory=ProjectorConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    arm: str = "injection"
    n_learnable: int = 30

    def __post_init__(self):
        if self.arm not in ARMS:
            raise ConfigError(f"unknown arm {self.arm!r}; expected one of {ARMS}")
        if self.encoder.d_m != self.projector.d_m:
            raise ConfigError("encoder and projector widths disagree")
        if self.decoder.d_llm != self.projector.d_llm:
            raise ConfigError("decoder width must equal the projector output width")


class ModalityPipeline:
    """One modality of one dataset, end to end."""

    def __init__(self, spec: DatasetSpec, kind: ModalityKind,
                 cfg: PipelineConfig, vocab: Vocab, seed: int):
        cfg.decoder.vocab_size = len(vocab)
        self.spec = spec
        self.kind = kind
        self.cfg = cfg
        self.vocab = vocab
        self.seed = seed
        geom = spec.geometry_for(kind)
        enc = cfg.encoder
        self.tokenizer = build_tokenizer(kind, geom, enc,
                                         derive_rng(seed, "tokenizer", kind.value))
        self.universal = UniversalEncoder(enc.d_m, enc.heads, enc.universal_depth,
                                          seed=enc.universal_seed,
                                          pe_scale=enc.pe_scale,
                                          init_scale=enc.stub_init_scale)
        self.tailored = None
        self.stage1_head = None
        if cfg.arm != "baseline":
            from .synth import base_caption
            from .text import text_anchor

            self.tailored = TailoredEncoder(kind, geom, enc,
                                            derive_rng(seed, "tailored", kind.value))
            anchors = np.stack([text_anchor(base_caption(a), enc.d_m)
                                for a in spec.actions])
            self.stage1_head = Stage1Head(enc.d_m, spec.n_actions,
                                          derive_rng(seed, "stage1-head"),
                                          anchors=anchors)
        if cfg.arm == "injection":
            self.projector = ModalityInjectionProjector(
                cfg.projector, derive_rng(seed, "projector"))
        else:
            self.projector = LearnableQueryProjector(
                cfg.projector, derive_rng(seed, "projector"),
                n_learnable=cfg.n_learnable)
        self.decoder = ActionDecoder(cfg.decoder, derive_rng(seed, "decoder"))
        self.classifier = ActionClassifier(cfg.decoder.d_llm, spec.n_actions,
                                           derive_rng(seed, "classifier"))

    # -- forward paths -----------------------------------------------------

    def universal_tokens(self, payloads: np.ndarray) -> Tensor:
        """[B, n_m, d_m] initial embeddings from the frozen stub."""
        rows = [self.universal(self.tokenizer(p).data) for p in payloads]
        return T.stack(rows)

    def tailored_features(self, payloads: np.ndarray) -> Tensor:
        if self.tailored is None:
            raise ConfigError("baseline arm has no tailored encoder")
        return self.tailored(payloads)

    def multimodal_tokens(self, payloads: np.ndarray) -> Tensor:
        """Projected tokens [B, n', d_llm] for the configured arm."""
        if self.cfg.arm == "injection":
            y_clip = self.universal_tokens(payloads)
            y_t = self.tailored_features(payloads)
            n_out = self.cfg.projector.queries_for(self.kind)
            return self.projector(y_clip, y_t, n_out)
        if self.cfg.arm == "tailored":
            return self.projector(flatten_grid(self.tailored_features(payloads)))
        return self.projector(self.universal_tokens(payloads))

    def stage1_logits(self, payloads: np.ndarray) -> Tensor:
        return self.stage1_head(self.tailored_features(payloads))

    def anchor_to_token_space(self, anchor: Tensor) -> Tensor:
        """Map a d_m text anchor through the model's final output MLP.

        The MLP's response at the origin (its trained bias point, shared by
        every anchor) is subtracted so the mapping carries the directional
        class information rather than a common offset; at initialization the
        biases are zero and this is plain application of the MLP.
        """
        mlp = self.projector.out_mlp
        zero = Tensor(np.zeros((1, anchor.shape[-1]), dtype=anchor.dtype))
        mapped = mlp(anchor.reshape(1, -1)) - mlp(zero)
        return mapped.reshape(-1)

    # -- parameter groups -----------------------------------------------------

    def group_parameters(self, group: str):
        if group == "tokenizer":
            yield from self.tokenizer.named_parameters("tokenizer.")
        elif group == "universal":
            yield from self.universal.named_parameters("universal.")
        elif group == "tailored" and self.tailored is not None:
            yield from self.tailored.named_parameters("tailored.")
        elif group == "stage1_head" and self.stage1_head is not None:
            yield from self.stage1_head.named_parameters("stage1_head.")
        elif group == "projector":
            yield from self.projector.named_parameters("projector.")
        elif group == "decoder":
            yield from self.decoder.named_parameters("decoder.")
        elif group == "classifier":
            yield from self.classifier.named_parameters("classifier.")

    def stage1_parameters(self):
        yield from self.group_parameters("tailored")
        yield from self.group_parameters("stage1_head")

    def stage2_parameters(self, train_tokenizer: bool = True):
        """Trainable stage-2 groups; the tailored backbone and the universal
        stub never appear here."""
        if train_tokenizer:
            yield from self.group_parameters("tokenizer")
        for name, p in self.group_parameters("tailored"):
            if name.split(".", 1)[1].startswith("align"):
                yield name, p
        yield from self.group_parameters("projector")
        yield from self.group_parameters("decoder")
        yield from self.group_parameters("classifier")

    def group_state(self, group: str) -> dict:
        return {name: p.value.data for name, p in self.group_parameters(group)}

    def load_group_state(self, group: str, state: dict):
        own = dict(self.group_parameters(group))
        for name, arr in state.items():
            if name not in own:
                raise ConfigError(f"unexpected parameter {name!r} for group {group}")
            p = own[name]
            p.value.data = np.asarray(arr, dtype=p.value.data.dtype).copy()

    def freeze_for_stage2(self):
        if self.tailored is not None:
            self.tailored.freeze_backbone()

    def frozen_state(self) -> dict:
        """Everything the freezing contract protects during stage 2."""
        state = dict(self.group_state("universal"))
        if self.tailored is not None:
            state.update({name: p.value.data
                          for name, p in self.group_parameters("tailored")
                          if name.split(".", 1)[1].startswith("backbone")})
        return state


# -- text batching ---------------------------------------------------------------

def qa_prompt(sample: QASample) -> str:
    return f"{sample.question} options: {', '.join(sample.action_list)}"


def build_text_batch(vocab: Vocab, prompts: list[str], answers: list[str],
                     max_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Teacher-forced rows [BOS p.. SEP a.. EOS PAD..] plus the answer-target
    mask (answer tokens and EOS)."""
    rows, masks = [], []
    for prompt, answer in zip(prompts, answers):
        p_ids = vocab.encode(prompt)
        a_ids = vocab.encode(answer)
        rows.append([BOS] + p_ids + [SEP] + a_ids + [EOS])
        masks.append([False] * (2 + len(p_ids)) + [True] * (len(a_ids) + 1))
    width = min(max(len(r) for r in rows), max_len)
    ids = np.full((len(rows), width), PAD, dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, (r, m) in enumerate(zip(rows, masks)):
        r, m = r[:width], m[:width]
        ids[i, :len(r)] = r
        mask[i, :len(m)] = m
    return ids, mask


def prompt_ids(vocab: Vocab, prompt: str) -> list[int]:
    return [BOS] + vocab.encode(prompt) + [SEP]
