"""Command-line entry point: synth, train, eval, ablate, plot.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every run writes a config snapshot plus its content hash beside the outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import PRESETS, split
from .errors import ConfigError, SenseLMError
from .metrics import MetricReport
from .modality import ModalityKind
from .pipeline import ModalityPipeline
from .seeding import derive_seed
from .synth import generate_synthetic, load_dataset, noise_profile, write_dataset
from .training import (ablation_run, evaluate_pipeline, finetune,
                       pretrain_tailored)

ARM_LABELS = {"baseline": "Baseline", "tailored": "+TailoredEncoder",
              "injection": "+InjectionProjector"}


def _out_dir(cfg: RunConfig, override: str | None) -> Path:
    out = override or os.environ.get("SENSELM_OUT") or cfg.out_dir
    cfg.out_dir = str(out)
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _snapshot(cfg: RunConfig, out: Path) -> None:
    cfg.save(out / "config.yaml")
    (out / "config.hash").write_text(cfg.content_hash() + "\n", encoding="utf-8")


def _load_run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    for key in ("preset", "setting", "seed", "arm", "model_preset"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "modality", None):
        cfg.modalities = list(args.modality)
    if getattr(args, "dataset", None):
        cfg.dataset_path = args.dataset
    return cfg


def _build_dataset(cfg: RunConfig):
    spec = cfg.dataset_spec()
    if cfg.dataset_path:
        return load_dataset(cfg.dataset_path, spec,
                            profile=noise_profile(cfg.noise_profile),
                            seed=cfg.seed)
    data_seed = derive_seed(cfg.seed, "data")
    return generate_synthetic(spec, noise_profile(cfg.noise_profile), data_seed)


def cmd_synth(args) -> int:
    if args.preset not in PRESETS:
        raise ConfigError(f"unknown preset {args.preset!r}; "
                          f"options: {sorted(PRESETS)}")
    cfg = RunConfig(preset=args.preset, seed=args.seed,
                    noise_profile=args.noise_profile)
    out = _out_dir(cfg, args.out)
    spec = cfg.dataset_spec()
    with_payloads = not args.manifest_only
    ds = generate_synthetic(spec, noise_profile(args.noise_profile), args.seed,
                            payloads=with_payloads)
    write_dataset(ds, out, payloads=with_payloads)
    _snapshot(cfg, out)
    print(f"wrote {len(ds.records)} sequences to {out}")
    return 0


def _train_one_modality(ds, kind, cfg: RunConfig, out: Path, stage: str) -> None:
    pipe = ModalityPipeline(ds.spec, kind, cfg.pipeline_config(), ds.vocab,
                            cfg.seed)
    train_cfg = cfg.train_config()
    assignment = split(ds.records, ds.spec, cfg.setting, cfg.seed)
    meta = {"config_hash": cfg.content_hash(), "arm": cfg.arm,
            "modality": kind.value, "seed": cfg.seed, "setting": cfg.setting}
    stage1_path = out / f"stage1_{kind.value}.ckpt"

    stage1_state = None
    if cfg.arm != "baseline":
        if stage in ("1", "all"):
            stage1_state, hist = pretrain_tailored(ds, kind, pipe, train_cfg,
                                                   assignment)
            save_checkpoint(stage1_path, stage1_state, {**meta, "stage": 1})
            hist.save(out / f"stage1_{kind.value}_history.csv")
        elif stage == "2":
            if not stage1_path.exists():
                raise ConfigError(
                    f"--stage 2 needs {stage1_path}; run --stage 1 (or all) first")
            stage1_state, _ = load_checkpoint(stage1_path)
    if stage in ("2", "all"):
        state, hist = finetune(ds, kind, pipe, train_cfg, assignment,
                               stage1_state)
        save_checkpoint(out / f"stage2_{kind.value}.ckpt", state,
                        {**meta, "stage": 2})
        hist.save(out / f"stage2_{kind.value}_history.csv")


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(cfg, args.out)
    _snapshot(cfg, out)
    ds = _build_dataset(cfg)
    for name in cfg.modalities:
        _train_one_modality(ds, ModalityKind(name), cfg, out, args.stage)
    print(f"training complete; outputs in {out}")
    return 0


def _restore_pipeline(ds, kind, cfg: RunConfig, ckpt_dir: Path):
    pipe = ModalityPipeline(ds.spec, kind, cfg.pipeline_config(), ds.vocab,
                            cfg.seed)
    stage2_path = ckpt_dir / f"stage2_{kind.value}.ckpt"
    if not stage2_path.exists():
        raise ConfigError(f"no stage-2 checkpoint at {stage2_path}")
    state, meta = load_checkpoint(stage2_path)
    if meta.get("config_hash") != cfg.content_hash():
        raise ConfigError(
            "checkpoint/config hash mismatch:\n"
            f"  checkpoint: {meta.get('config_hash')}\n"
            f"  config:     {cfg.content_hash()}")
    if cfg.arm != "baseline":
        stage1_state, _ = load_checkpoint(ckpt_dir / f"stage1_{kind.value}.ckpt")
        from .training import _load_stage1_state
        _load_stage1_state(pipe, stage1_state)
        pipe.freeze_for_stage2()
    own = dict(pipe.stage2_parameters())
    for name, arr in state.items():
        own[name].value.data = np.asarray(arr, dtype=own[name].value.data.dtype).copy()
    return pipe


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(cfg, args.out)
    ds = _build_dataset(cfg)
    assignment = split(ds.records, ds.spec, cfg.setting, cfg.seed)
    tasks = tuple(args.tasks.split(",")) if args.tasks else (
        "recognition", "qa", "caption")
    report = MetricReport(config_hash=cfg.content_hash())
    for name in cfg.modalities:
        kind = ModalityKind(name)
        pipe = _restore_pipeline(ds, kind, cfg, Path(args.ckpt))
        scores = evaluate_pipeline(ds, kind, pipe, assignment.test_ids,
                                   tasks=tasks,
                                   max_caption_tokens=cfg.max_caption_tokens)
        for task in tasks:
            report.add(task, kind.value, scores[task],
                       count=len(assignment.test_ids))
        report.extras[f"{kind.value}.cluster_separation"] = \
            scores["cluster_separation"]
        report.extras[f"{kind.value}.alignment_gap"] = scores["alignment_gap"]
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    _snapshot(cfg, out)
    print(report.to_csv().rstrip())
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(cfg, args.out)
    _snapshot(cfg, out)
    ds = _build_dataset(cfg)
    reports = ablation_run(ds, cfg.setting, cfg.pipeline_config(),
                           cfg.train_config(),
                           modalities=[ModalityKind(m) for m in cfg.modalities])
    lines = []
    modalities = list(cfg.modalities)
    header = ["arm", "task"] + modalities + ["Avg"]
    lines.append(",".join(header))
    combined = {}
    for arm in ("baseline", "tailored", "injection"):
        rep = reports[arm]
        combined[ARM_LABELS[arm]] = rep.as_dict()
        for task in ("recognition", "qa", "caption"):
            row = [ARM_LABELS[arm], task]
            row += [f"{rep.scores[task][m]:.4f}" for m in modalities]
            row.append(f"{rep.average(task):.4f}")
            lines.append(",".join(row))
        (out / f"ablation_{arm}.json").write_text(rep.to_json() + "\n",
                                                  encoding="utf-8")
    (out / "ablation.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "ablation.json").write_text(
        json.dumps(combined, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return 0


def cmd_plot(args) -> int:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("plotting needs matplotlib (pip install senselm[plot])",
              file=sys.stderr)
        return 1
    import csv as _csv

    out = Path(args.out or "plot.png")
    with open(args.history, newline="", encoding="utf-8") as fh:
        rows = list(_csv.DictReader(fh))
    steps = [int(r["step"]) for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    axes[0].plot(steps, [float(r["loss"]) for r in rows])
    axes[0].set_xlabel("step")
    axes[0].set_ylabel("loss")
    axes[1].plot(steps, [float(r["lr"]) for r in rows])
    axes[1].set_xlabel("step")
    axes[1].set_ylabel("lr")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="senselm",
        description="Desk-scale multimodal sensing-to-language pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset tree")
    p_synth.add_argument("--preset", default="desk")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--noise-profile", default="default")
    p_synth.add_argument("--manifest-only", action="store_true",
                         help="skip payload files (manifest and text only)")
    p_synth.add_argument("--out", default=None)
    p_synth.set_defaults(fn=cmd_synth)

    def common(p):
        p.add_argument("--config", default=None)
        p.add_argument("--preset", default=None)
        p.add_argument("--setting", default=None,
                       choices=["random", "cross-sub", "cross-env"])
        p.add_argument("--modality", action="append", default=None,
                       choices=[m.value for m in ModalityKind])
        p.add_argument("--arm", default=None, choices=["baseline", "tailored", "injection"])
        p.add_argument("--model-preset", dest="model_preset", default=None,
                       choices=["desk", "paper-shapes"])
        p.add_argument("--dataset", default=None,
                       help="load payloads from a synth output dir")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)

    p_train = sub.add_parser("train", help="run the two-stage training")
    common(p_train)
    p_train.add_argument("--stage", default="all", choices=["1", "2", "all"])
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate checkpoints")
    common(p_eval)
    p_eval.add_argument("--ckpt", required=True,
                        help="directory holding stage checkpoints")
    p_eval.add_argument("--tasks", default=None,
                        help="comma list from recognition,qa,caption")
    p_eval.set_defaults(fn=cmd_eval)

    p_abl = sub.add_parser("ablate", help="run the three-arm comparison")
    common(p_abl)
    p_abl.set_defaults(fn=cmd_ablate)

    p_plot = sub.add_parser("plot", help="render a history CSV as an image")
    p_plot.add_argument("--history", required=True)
    p_plot.add_argument("--out", default=None)
    p_plot.set_defaults(fn=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, SenseLMError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
