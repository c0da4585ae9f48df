"""Run configuration: a sectioned YAML file {data, model, optimizer, schedule,
seed} with flag overrides, plus the model presets and config hashing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import PRESETS, DatasetSpec
from .decoder import DecoderConfig
from .encoders import EncoderConfig
from .errors import ConfigError
from .modality import ModalityKind
from .optim import OptimizerConfig, WarmupConstant, WarmupStepDecay
from .pipeline import PipelineConfig
from .projector import ProjectorConfig, paper_projector_config
from .training import TrainConfig

DESK_QUERIES = {
    ModalityKind.VIDEO: 12,
    ModalityKind.DEPTH: 12,
    ModalityKind.INFRARED: 12,
    ModalityKind.LIDAR: 8,
    ModalityKind.MMWAVE: 8,
    ModalityKind.WIFI_CSI: 4,
    ModalityKind.RFID: 4,
}


@dataclass
class RunConfig:
    """Everything one command run needs; serializable to sectioned YAML."""

    preset: str = "desk"
    dataset_path: str = ""
    setting: str = "cross-env"
    modalities: list = field(default_factory=lambda: ["video"])
    model_preset: str = "desk"
    arm: str = "injection"
    seed: int = 0
    noise_profile: str = "default"
    out_dir: str = "runs/latest"
    # model section (desk defaults; presets may override)
    d_m: int = 48
    d_llm: int = 96
    heads: int = 4
    projector_blocks: int = 2
    decoder_layers: int = 2
    max_len: int = 160
    n_learnable: int = 30
    calibrated_image_init: bool = True
    # optimizer section
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.1
    # schedule section
    stage1_epochs: int = 10
    stage1_base_lr: float = 3e-3
    stage1_warmup: int = 2
    stage1_decay_at: list = field(default_factory=lambda: [14, 20])
    stage2_epochs: int = 2
    stage2_max_lr: float = 2e-3
    stage2_warmup: int = 30
    stage2_micro_batch: int = 12
    stage2_accum: int = 1
    stage2_max_steps: int = 0
    stage1_batch: int = 16
    max_caption_tokens: int = 24

    def sections(self) -> dict:
        return {
            "data": {
                "preset": self.preset,
                "dataset_path": self.dataset_path,
                "setting": self.setting,
                "modalities": list(self.modalities),
                "noise_profile": self.noise_profile,
            },
            "model": {
                "model_preset": self.model_preset,
                "arm": self.arm,
                "d_m": self.d_m,
                "d_llm": self.d_llm,
                "heads": self.heads,
                "projector_blocks": self.projector_blocks,
                "decoder_layers": self.decoder_layers,
                "max_len": self.max_len,
                "n_learnable": self.n_learnable,
                "calibrated_image_init": self.calibrated_image_init,
            },
            "optimizer": {
                "beta1": self.beta1,
                "beta2": self.beta2,
                "weight_decay": self.weight_decay,
            },
            "schedule": {
                "stage1_epochs": self.stage1_epochs,
                "stage1_base_lr": self.stage1_base_lr,
                "stage1_warmup": self.stage1_warmup,
                "stage1_decay_at": list(self.stage1_decay_at),
                "stage1_batch": self.stage1_batch,
                "stage2_epochs": self.stage2_epochs,
                "stage2_max_lr": self.stage2_max_lr,
                "stage2_warmup": self.stage2_warmup,
                "stage2_micro_batch": self.stage2_micro_batch,
                "stage2_accum": self.stage2_accum,
                "stage2_max_steps": self.stage2_max_steps,
                "max_caption_tokens": self.max_caption_tokens,
            },
            "seed": {"seed": self.seed, "out_dir": self.out_dir},
        }

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump(self.sections(), sort_keys=True),
                        encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunConfig":
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: not a mapping of sections")
        cfg = cls()
        for section in ("data", "model", "optimizer", "schedule", "seed"):
            for key, value in (raw.get(section) or {}).items():
                if not hasattr(cfg, key):
                    raise ConfigError(f"{path}: unknown config key {key!r}")
                setattr(cfg, key, value)
        return cfg

    def content_hash(self) -> str:
        sections = self.sections()
        sections["seed"] = dict(sections["seed"])
        sections["seed"].pop("out_dir", None)  # run identity, not its location
        blob = json.dumps(sections, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    # -- builders ----------------------------------------------------------

    def dataset_spec(self) -> DatasetSpec:
        if self.preset not in PRESETS:
            raise ConfigError(
                f"unknown dataset preset {self.preset!r}; options: {sorted(PRESETS)}")
        kinds = [ModalityKind(m) for m in self.modalities]
        if self.preset == "desk":
            return PRESETS["desk"](modalities=kinds)
        return PRESETS[self.preset]()

    def pipeline_config(self) -> PipelineConfig:
        if self.model_preset == "paper-shapes":
            projector = paper_projector_config(
                "xrf55" if self.preset.startswith("xrf") else "mmfi")
            encoder = EncoderConfig(d_m=projector.d_m, heads=8, voxel_grid=8)
            decoder = DecoderConfig(layers=self.decoder_layers,
                                    d_llm=projector.d_llm, heads=8,
                                    max_len=2048)
        else:
            encoder = EncoderConfig(
                d_m=self.d_m, heads=self.heads,
                calibrated_image_init=self.calibrated_image_init)
            projector = ProjectorConfig(
                n_blocks=self.projector_blocks, d_m=self.d_m, d_llm=self.d_llm,
                heads=self.heads, n_queries=dict(DESK_QUERIES))
            decoder = DecoderConfig(layers=self.decoder_layers, d_llm=self.d_llm,
                                    heads=self.heads, max_len=self.max_len)
        return PipelineConfig(encoder=encoder, projector=projector,
                              decoder=decoder, arm=self.arm,
                              n_learnable=self.n_learnable)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            seed=self.seed,
            setting=self.setting,
            stage1_epochs=self.stage1_epochs,
            stage1_batch=self.stage1_batch,
            stage1_schedule=WarmupStepDecay(
                base_lr=self.stage1_base_lr, warmup=self.stage1_warmup,
                decay_at=tuple(self.stage1_decay_at), total=self.stage1_epochs),
            stage2_epochs=self.stage2_epochs,
            stage2_micro_batch=self.stage2_micro_batch,
            stage2_accum=self.stage2_accum,
            stage2_schedule=WarmupConstant(max_lr=self.stage2_max_lr,
                                           warmup=self.stage2_warmup),
            stage2_max_steps=self.stage2_max_steps,
            optimizer=OptimizerConfig(beta1=self.beta1, beta2=self.beta2,
                                      weight_decay=self.weight_decay),
            max_caption_tokens=self.max_caption_tokens,
        )
