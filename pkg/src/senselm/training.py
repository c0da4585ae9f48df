"""Two-stage training, evaluation, and the three-arm ablation protocol.

Stage 1 pre-trains the tailored encoder plus a classification head on the
action-recognition loss over the setting's train split. Stage 2 freezes the
tailored backbone and the universal stub, then fine-tunes tokenizer,
projector, decoder, and heads on classification plus next-token prediction
over QA and caption samples.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import state_hash
from .data import FIXED_CAPTION_PROMPT, SplitAssignment, split
from .decoder import stage2_loss, text_anchor_embed
from .errors import ConfigError
from .metrics import MetricReport, accuracy, alignment_gap, cluster_separation, meteor
from .modality import ModalityKind
from .optim import OptimizerConfig, WarmupConstant, WarmupStepDecay, lr_at
from .pipeline import (ARMS, ModalityPipeline, PipelineConfig, build_text_batch,
                       prompt_ids, qa_prompt)
from .seeding import derive_rng
from .synth import SyntheticDataset, base_caption
from .tensor import Tensor


@dataclass
class TrainConfig:
    seed: int = 0
    setting: str = "cross-env"
    stage1_epochs: int = 24
    stage1_batch: int = 16
    stage1_schedule: WarmupStepDecay = field(default_factory=lambda: WarmupStepDecay(
        base_lr=0.02, warmup=3, decay_at=(14, 20), total=24))
    stage2_epochs: int = 4
    stage2_micro_batch: int = 12
    stage2_accum: int = 1
    stage2_schedule: WarmupConstant = field(default_factory=lambda: WarmupConstant(
        max_lr=2e-3, warmup=40))
    stage2_max_steps: int = 0  # 0: no cap
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    val_fraction: float = 0.1
    train_tokenizer: bool = True
    max_caption_tokens: int = 24


def paper_train_config() -> TrainConfig:
    """The published budgets and schedules (not desk-runnable, but encodable)."""
    return TrainConfig(
        stage1_epochs=120,
        stage1_schedule=WarmupStepDecay(base_lr=0.1, warmup=10,
                                        decay_at=(60, 100), total=120),
        stage2_epochs=5,
        stage2_micro_batch=16,
        stage2_accum=4,
        stage2_schedule=WarmupConstant(max_lr=2e-5, warmup=2000),
    )


class History:
    """(step, lr, loss, metric) rows, serialized as CSV."""

    def __init__(self):
        self.rows: list[tuple] = []

    def log(self, step, lr, loss, metric):
        self.rows.append((int(step), float(lr), float(loss), float(metric)))

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "lr", "loss", "metric"])
            writer.writerows(self.rows)


def _labels(ds: SyntheticDataset, ids: list[str]) -> np.ndarray:
    return np.array([ds.record_by_id(i).action_id for i in ids], dtype=np.int64)


def _payload_batch(ds: SyntheticDataset, ids: list[str], kind: ModalityKind):
    return np.stack([ds.payload(i, kind) for i in ids])


def stage1_val_split(train_ids: list[str], seed: int, fraction: float):
    order = np.array(train_ids)
    derive_rng(seed, "stage1-val").shuffle(order)
    n_val = max(1, int(round(fraction * len(order))))
    return order[n_val:].tolist(), order[:n_val].tolist()


def pretrain_tailored(ds: SyntheticDataset, kind: ModalityKind,
                      pipe: ModalityPipeline, cfg: TrainConfig,
                      assignment: SplitAssignment) -> tuple[dict, History]:
    """Stage 1: minimize the recognition loss over tailored encoder + head."""
    if pipe.tailored is None:
        raise ConfigError("stage 1 needs a tailored encoder (non-baseline arm)")
    fit_ids, val_ids = stage1_val_split(assignment.train_ids, cfg.seed,
                                        cfg.val_fraction)
    params = list(pipe.stage1_parameters())
    opt = cfg.optimizer.build(params)
    history = History()
    last_good = _stage1_state(pipe)
    for epoch in range(cfg.stage1_epochs):
        lr = lr_at(cfg.stage1_schedule, epoch)
        order = np.array(fit_ids)
        derive_rng(cfg.seed, "stage1-shuffle", kind.value, epoch).shuffle(order)
        losses = []
        for lo in range(0, len(order), cfg.stage1_batch):
            batch = order[lo:lo + cfg.stage1_batch].tolist()
            logits = pipe.stage1_logits(_payload_batch(ds, batch, kind))
            loss = T.cross_entropy(logits, _labels(ds, batch))
            if not np.isfinite(loss.item()):
                warnings.warn(f"stage 1 diverged at epoch {epoch}; "
                              "returning last good checkpoint")
                _load_stage1_state(pipe, last_good)
                return last_good, history
            opt.zero_grad()
            loss.backward()
            opt.step(lr=lr)
            losses.append(loss.item())
        val_acc = stage1_accuracy(ds, kind, pipe, val_ids, cfg.stage1_batch)
        history.log(epoch, lr, float(np.mean(losses)), val_acc)
        last_good = _stage1_state(pipe)
    return last_good, history


def _stage1_state(pipe: ModalityPipeline) -> dict:
    state = {}
    for group in ("tailored", "stage1_head"):
        for name, p in pipe.group_parameters(group):
            state[name] = p.value.data.copy()
    return state


def _load_stage1_state(pipe: ModalityPipeline, state: dict):
    own = dict(pipe.group_parameters("tailored"))
    own.update(pipe.group_parameters("stage1_head"))
    for name, arr in state.items():
        own[name].value.data = arr.copy()


def stage1_accuracy(ds, kind, pipe, ids, batch_size) -> float:
    if not ids:
        return 0.0
    hits = 0
    with T.no_grad():
        for lo in range(0, len(ids), batch_size):
            batch = ids[lo:lo + batch_size]
            logits = pipe.stage1_logits(_payload_batch(ds, batch, kind))
            hits += int((logits.data.argmax(axis=1) == _labels(ds, batch)).sum())
    return hits / len(ids)


# -- stage 2 --------------------------------------------------------------------

def _stage2_examples(ids: list[str]):
    examples = []
    for seq in ids:
        examples.append((seq, "qa"))
        examples.append((seq, "caption"))
    return examples


def _example_text(ds: SyntheticDataset, kind: ModalityKind, seq: str, task: str):
    if task == "qa":
        sample = ds.qa[(seq, kind.value)]
        return qa_prompt(sample), sample.answer
    return FIXED_CAPTION_PROMPT, ds.captions[seq]


def finetune(ds: SyntheticDataset, kind: ModalityKind, pipe: ModalityPipeline,
             cfg: TrainConfig, assignment: SplitAssignment,
             stage1_state: dict | None = None) -> tuple[dict, History]:
    """Stage 2: freeze tailored backbone + universal stub, fine-tune the rest."""
    if pipe.tailored is not None:
        if stage1_state is None:
            raise ConfigError("stage 2 needs the stage-1 checkpoint for this arm")
        _load_stage1_state(pipe, stage1_state)
    pipe.freeze_for_stage2()
    frozen_before = state_hash(pipe.frozen_state())

    params = list(pipe.stage2_parameters(train_tokenizer=cfg.train_tokenizer))
    opt = cfg.optimizer.build(params)
    examples = _stage2_examples(assignment.train_ids)
    macro = cfg.stage2_micro_batch * cfg.stage2_accum
    history = History()
    step = 0
    done = False
    for epoch in range(cfg.stage2_epochs):
        order = np.arange(len(examples))
        derive_rng(cfg.seed, "stage2-shuffle", kind.value, epoch).shuffle(order)
        for lo in range(0, len(order) - macro + 1, macro):
            lr = lr_at(cfg.stage2_schedule, step)
            chunk = [examples[i] for i in order[lo:lo + macro]]
            micros = [chunk[i:i + cfg.stage2_micro_batch]
                      for i in range(0, len(chunk), cfg.stage2_micro_batch)]
            batches = []
            total_tokens = 0
            for micro in micros:
                seqs = [s for s, _ in micro]
                prompts, answers = zip(*[_example_text(ds, kind, s, t)
                                         for s, t in micro])
                ids, mask = build_text_batch(pipe.vocab, list(prompts),
                                             list(answers), pipe.cfg.decoder.max_len)
                batches.append((seqs, ids, mask))
                total_tokens += int(mask[:, 1:].sum())
            opt.zero_grad()
            loss_value = 0.0
            for seqs, ids, mask in batches:
                z = pipe.multimodal_tokens(_payload_batch(ds, seqs, kind))
                loss, _ = stage2_loss(pipe.decoder, pipe.classifier, z, ids, mask,
                                      _labels(ds, seqs),
                                      loss_scale=(macro, total_tokens))
                loss.backward()
                loss_value += loss.item()
            if not np.isfinite(loss_value):
                warnings.warn(f"stage 2 diverged at step {step}; stopping early")
                done = True
                break
            opt.step(lr=lr)
            history.log(step, lr, loss_value, 0.0)
            step += 1
            if cfg.stage2_max_steps and step >= cfg.stage2_max_steps:
                done = True
                break
        if done:
            break

    frozen_after = state_hash(pipe.frozen_state())
    if frozen_after != frozen_before:
        raise ConfigError("freezing contract violated: frozen parameters moved")
    state = {name: p.value.data.copy() for name, p in pipe.stage2_parameters()}
    return state, history


# -- evaluation -------------------------------------------------------------------

def _generate_answer(pipe: ModalityPipeline, z_row: Tensor, prompt: str,
                     max_new: int) -> str:
    out = pipe.decoder.generate(z_row, prompt_ids(pipe.vocab, prompt), max_new)
    return pipe.vocab.decode(out)


def evaluate_pipeline(ds: SyntheticDataset, kind: ModalityKind,
                      pipe: ModalityPipeline, test_ids: list[str],
                      tasks=("recognition", "qa", "caption"),
                      batch_size: int = 16, max_caption_tokens: int = 24,
                      max_qa_tokens: int = 8) -> dict:
    """Per-task scores plus the Z-token diagnostics on the test split."""
    results: dict = {}
    labels = _labels(ds, test_ids)
    pooled_rows = []
    with T.no_grad():
        z_by_seq = {}
        for lo in range(0, len(test_ids), batch_size):
            chunk = test_ids[lo:lo + batch_size]
            z = pipe.multimodal_tokens(_payload_batch(ds, chunk, kind))
            for i, seq in enumerate(chunk):
                z_by_seq[seq] = Tensor(z.data[i])
            pooled_rows.append(z.data.mean(axis=1))
        pooled = np.concatenate(pooled_rows, axis=0)

        if "recognition" in tasks:
            hits = 0
            for lo in range(0, len(test_ids), batch_size):
                chunk = test_ids[lo:lo + batch_size]
                prompts = [qa_prompt(ds.qa[(s, kind.value)]) for s in chunk]
                ids, _ = build_text_batch(pipe.vocab, prompts, [""] * len(chunk),
                                          pipe.cfg.decoder.max_len)
                z = T.stack([z_by_seq[s] for s in chunk])
                _, hidden = pipe.decoder.decode(z, ids)
                state = pipe.decoder.instruction_state(hidden, ids)
                preds = pipe.classifier(state).data.argmax(axis=1)
                hits += int((preds == _labels(ds, chunk)).sum())
            results["recognition"] = hits / len(test_ids)

        if "qa" in tasks:
            preds, golds = [], []
            for seq in test_ids:
                sample = ds.qa[(seq, kind.value)]
                preds.append(_generate_answer(pipe, z_by_seq[seq],
                                              qa_prompt(sample), max_qa_tokens))
                golds.append(sample.answer)
            results["qa"] = accuracy(preds, golds)

        if "caption" in tasks:
            scores = []
            for seq in test_ids:
                hyp = _generate_answer(pipe, z_by_seq[seq], FIXED_CAPTION_PROMPT,
                                       max_caption_tokens)
                scores.append(meteor(hyp, ds.captions[seq]))
            results["caption"] = float(np.mean(scores))

        anchors = np.stack([
            pipe.anchor_to_token_space(
                text_anchor_embed(base_caption(a), pipe.cfg.encoder.d_m)).data
            for a in ds.spec.actions])
        results["cluster_separation"] = cluster_separation(pooled, labels)
        results["alignment_gap"] = alignment_gap(pooled, labels, anchors)
    return results


# -- ablation protocol ---------------------------------------------------------

def ablation_run(ds: SyntheticDataset, setting: str, base_cfg: PipelineConfig,
                 train_cfg: TrainConfig, arms=ARMS,
                 modalities: list[ModalityKind] | None = None) -> dict:
    """Train and evaluate each arm on identical data, split, seed, and budget.

    Stage-1 checkpoints are shared between the tailored and injection arms (same
    seed, same parameters), mirroring a single pre-training run.
    """
    from dataclasses import replace

    modalities = modalities or ds.spec.modalities
    assignment = split(ds.records, ds.spec, setting, train_cfg.seed)
    reports = {arm: MetricReport() for arm in arms}
    stage1_cache: dict = {}
    for kind in modalities:
        for arm in arms:
            cfg = replace(base_cfg, arm=arm)
            pipe = ModalityPipeline(ds.spec, kind, cfg, ds.vocab, train_cfg.seed)
            stage1_state = None
            if arm != "baseline":
                if kind not in stage1_cache:
                    stage1_cache[kind], _ = pretrain_tailored(
                        ds, kind, pipe, train_cfg, assignment)
                stage1_state = stage1_cache[kind]
            finetune(ds, kind, pipe, train_cfg, assignment, stage1_state)
            scores = evaluate_pipeline(ds, kind, pipe, assignment.test_ids,
                                       max_caption_tokens=train_cfg.max_caption_tokens)
            for task in ("recognition", "qa", "caption"):
                reports[arm].add(task, kind.value, scores[task],
                                 count=len(assignment.test_ids))
            reports[arm].extras[f"{kind.value}.cluster_separation"] = \
                scores["cluster_separation"]
            reports[arm].extras[f"{kind.value}.alignment_gap"] = \
                scores["alignment_gap"]
    return reports
