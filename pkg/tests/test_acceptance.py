"""Acceptance criteria. One test per criterion; each prints a PASS/FAIL line
(run with `pytest -s` to see them live). Slow trend/alignment/determinism
criteria are marked `slow`.
"""

import time
import numpy as np
import pytest

from senselm import tensor as T
from senselm.checkpoint import file_hash, save_checkpoint
from senselm.cli import main as cli_main
from senselm.config import RunConfig
from senselm.data import build_records, desk_spec, mmfi_like_spec, split
from senselm.decoder import (ActionClassifier, ActionDecoder, DecoderConfig,
                             stage2_loss)
from senselm.encoders import EncoderConfig
from senselm.gradcheck import grad_check
from senselm.metrics import meteor, min_chunk_alignment
from senselm.modality import ModalityKind, PayloadGeometry
from senselm.nn import MultiHeadAttention
from senselm.optim import WarmupConstant, WarmupStepDecay, lr_at
from senselm.pipeline import (ModalityPipeline, PipelineConfig,
                              build_text_batch)
from senselm.projector import (LearnableQueryProjector,
                               ModalityInjectionProjector, ProjectorConfig,
                               paper_projector_config)
from senselm.seeding import derive_rng
from senselm.synth import generate_synthetic, noise_profile
from senselm.tensor import Tensor, precision
from senselm.text import RESERVED, Vocab, tokenize_words
from senselm.training import (TrainConfig, ablation_run, evaluate_pipeline,
                              finetune, pretrain_tailored)

from test_metrics import oracle_alignment, oracle_meteor


def _line(number: int, ok: bool, detail: str):
    print(f"\n[criterion {number:02d}] {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {number}: {detail}"


def _desk_pipeline_config(arm="injection", d_m=48, d_llm=96, blocks=2, layers=2):
    return PipelineConfig(
        encoder=EncoderConfig(d_m=d_m, heads=4),
        projector=ProjectorConfig(n_blocks=blocks, d_m=d_m, d_llm=d_llm,
                                  heads=4,
                                  n_queries={k: 8 for k in ModalityKind}),
        decoder=DecoderConfig(layers=layers, d_llm=d_llm, heads=4, max_len=96),
        arm=arm,
    )


def _trend_train_config(seed, stage1_epochs=10, stage2_epochs=2):
    return TrainConfig(
        seed=seed,
        stage1_epochs=stage1_epochs,
        stage1_schedule=WarmupStepDecay(base_lr=3e-3, warmup=2,
                                        decay_at=(20, 28), total=stage1_epochs),
        stage2_epochs=stage2_epochs,
        stage2_schedule=WarmupConstant(max_lr=2e-3, warmup=30),
    )


def test_criterion_01_gradient_fidelity():
    start = time.time()
    with precision(np.float64):
        rng = derive_rng(0, "acceptance-e2e")
        pcfg = ProjectorConfig(n_blocks=2, d_m=16, d_llm=16, heads=2)
        proj = ModalityInjectionProjector(pcfg, rng)
        vocab = Vocab(list(RESERVED) + [f"w{i}" for i in range(12)])
        dcfg = DecoderConfig(layers=1, d_llm=16, heads=2, max_len=48,
                             vocab_size=len(vocab))
        dec = ActionDecoder(dcfg, rng)
        cls = ActionClassifier(16, 4, rng)
        y_clip = Tensor(rng.normal(size=(1, 10, 16)))
        y_t = Tensor(rng.normal(size=(1, 3, 3, 16)))
        ids, mask = build_text_batch(vocab, ["w0 w1 w2"], ["w5 w6"], 48)
        labels = np.array([1])
        params = (list(proj.named_parameters()) + list(dec.named_parameters())
                  + list(cls.named_parameters()))

        def f():
            z = proj(y_clip, y_t, 3)
            loss, _ = stage2_loss(dec, cls, z, ids, mask, labels)
            return loss

        report = grad_check(f, params, tol=1e-5)
    elapsed = time.time() - start
    ok = report.passed and elapsed < 60.0
    _line(1, ok, f"max rel err {report.max_rel_err:.2e} (tol 1e-5) over "
                 f"{sum(p.value.size for _, p in params)} scalars in {elapsed:.1f}s")


def test_criterion_02_attention_pooling_invariants():
    start = time.time()
    rng = np.random.default_rng(0)
    worst_sum = 0.0
    for _ in range(50):
        shape = tuple(rng.integers(1, 7, size=rng.integers(1, 4)))
        axis = int(rng.integers(0, len(shape)))
        x = Tensor(rng.normal(0, 5, shape), dtype=np.float64)
        sums = T.softmax(x, axis=axis).data.sum(axis=axis)
        worst_sum = max(worst_sum, float(np.abs(sums - 1.0).max()))

    pool_identity = True
    for n in (1, 3, 8):
        x = Tensor(rng.normal(size=(n, 5)))
        pool_identity &= np.array_equal(T.adaptive_avg_pool_1d(x, n).data, x.data)

    worst_perm = 0.0
    for trial in range(10):
        mha = MultiHeadAttention(8, 4, derive_rng(trial, "kv-perm"))
        q = Tensor(rng.normal(size=(5, 8)), dtype=np.float64)
        k = rng.normal(size=(9, 8))
        v = rng.normal(size=(9, 8))
        perm = rng.permutation(9)
        a = mha(q, Tensor(k, dtype=np.float64), Tensor(v, dtype=np.float64))
        b = mha(q, Tensor(k[perm], dtype=np.float64),
                Tensor(v[perm], dtype=np.float64))
        worst_perm = max(worst_perm, float(np.abs(a.data - b.data).max()))

    elapsed = time.time() - start
    ok = worst_sum < 1e-6 and pool_identity and worst_perm < 1e-6 and elapsed < 30.0
    _line(2, ok, f"softmax row-sum err {worst_sum:.1e}, pool identity "
                 f"{pool_identity}, KV-permutation err {worst_perm:.1e}, "
                 f"{elapsed:.1f}s")


def test_criterion_03_shape_contract_at_paper_presets():
    from senselm.encoders import TailoredEncoder, UniversalEncoder, build_tokenizer

    pcfg = paper_projector_config("mmfi")
    enc = EncoderConfig(d_m=1024, heads=8, voxel_grid=8)
    rng = derive_rng(0, "paper-shapes")
    proj = ModalityInjectionProjector(pcfg, rng)
    uni = UniversalEncoder(1024, 8, 2)
    spec = mmfi_like_spec()
    results = []
    with T.no_grad():
        for kind, expected in ((ModalityKind.VIDEO, 64),
                               (ModalityKind.LIDAR, 256),
                               (ModalityKind.RFID, 16)):
            geom = spec.geometry_for(kind) if kind is not ModalityKind.RFID \
                else PayloadGeometry(frames=5, time_steps=200, sensors=8)
            tok = build_tokenizer(kind, geom, enc, rng)
            te = TailoredEncoder(kind, geom, enc, rng)
            payload = np.random.default_rng(1).normal(
                size=geom.shape(kind)).astype(np.float32)
            y_clip = uni(tok(payload).data)
            z = proj(Tensor(y_clip.data[None]), te(payload[None]),
                     pcfg.queries_for(kind))
            results.append(z.shape == (1, expected, 4096))
        qf = LearnableQueryProjector(pcfg, rng, n_learnable=30)
        bank_ok = qf.queries.value.shape == (30, 1024)
        z = qf(Tensor(y_clip.data[None]))
        out_ok = z.shape == (1, 30, 4096)
    ok = all(results) and bank_ok and out_ok
    _line(3, ok, "projector emits 64/256/16 tokens at d_m=1024, d_llm=4096, L=8; "
                 "query bank 30x1024 -> 30x4096")


def test_criterion_04_split_statistics():
    spec = mmfi_like_spec()
    records = build_records(spec)
    sizes = {}
    for setting in ("random", "cross-sub", "cross-env"):
        runs = [split(records, spec, setting, seed=7) for _ in range(3)]
        assert runs[0].train_ids == runs[1].train_ids == runs[2].train_ids
        assert runs[0].test_ids == runs[1].test_ids == runs[2].test_ids
        sp = runs[0]
        all_ids = {r.id for r in records}
        assert set(sp.train_ids) | set(sp.test_ids) == all_ids
        assert not set(sp.train_ids) & set(sp.test_ids)
        sizes[setting] = (len(sp.train_ids), len(sp.test_ids))
    ok = sizes["random"] == (12336, 4112)
    _line(4, ok, f"mmfi-like random {sizes['random']}, "
                 f"cross-sub {sizes['cross-sub']}, cross-env {sizes['cross-env']}; "
                 "disjoint+cover, bitwise across 3 reruns")


def test_criterion_05_meteor_oracle_equivalence():
    assert meteor("a b c d", "a b c d") == 0.9921875
    assert meteor("d c b a", "a b c d") == 0.5
    rng = np.random.default_rng(7)
    alphabet = [f"t{i}" for i in range(8)]
    checked = 0
    for _ in range(200):
        cand = " ".join(rng.choice(alphabet, size=rng.integers(1, 13)))
        ref = " ".join(rng.choice(alphabet, size=rng.integers(1, 13)))
        got = min_chunk_alignment(tokenize_words(cand), tokenize_words(ref))
        want = oracle_alignment(tokenize_words(cand), tokenize_words(ref))
        assert got == want, (cand, ref)
        assert meteor(cand, ref) == oracle_meteor(cand, ref), (cand, ref)
        checked += 1
    _line(5, checked == 200,
          f"{checked} randomized pairs match the brute-force enumerator exactly; "
          "hand values 0.9921875 and 0.5 reproduced")


@pytest.mark.slow
def test_criterion_06_two_stage_trend_reproduction():
    start = time.time()
    spec = desk_spec()  # 6 classes, video + lidar + wifi
    seeds = (0, 1, 2)
    rec = {arm: [] for arm in ("baseline", "tailored", "injection")}
    qa = {arm: [] for arm in ("baseline", "tailored", "injection")}
    for seed in seeds:
        ds = generate_synthetic(spec, noise_profile("default"), seed=100 + seed)
        reports = ablation_run(ds, "cross-env", _desk_pipeline_config(),
                               _trend_train_config(seed))
        for arm in rec:
            rec[arm].append(reports[arm].average("recognition"))
            qa[arm].append(reports[arm].average("qa"))
    mean = {arm: float(np.mean(v)) for arm, v in rec.items()}
    mean_qa = {arm: float(np.mean(v)) for arm, v in qa.items()}
    elapsed = time.time() - start
    margin = mean["tailored"] - mean["baseline"]
    ok = margin >= 0.10 and mean_qa["injection"] >= mean_qa["tailored"] \
        and elapsed < 1800.0
    _line(6, ok,
          f"seed-mean recognition baseline {mean['baseline']:.3f}, "
          f"tailored {mean['tailored']:.3f} (margin {margin * 100:.1f} pts); "
          f"QA tailored {mean_qa['tailored']:.3f} <= injection {mean_qa['injection']:.3f}; "
          f"{elapsed / 60:.1f} min")


@pytest.mark.slow
def test_criterion_07_freezing_contract(tmp_path):
    spec = desk_spec()
    ds = generate_synthetic(spec, noise_profile("default"), seed=42)
    assignment = split(ds.records, spec, "cross-env", 0)
    kind = ModalityKind.WIFI_CSI
    pipe = ModalityPipeline(spec, kind, _desk_pipeline_config(), ds.vocab, 0)
    cfg = _trend_train_config(0, stage2_epochs=1)
    cfg.stage2_max_steps = 10
    stage1_state, _ = pretrain_tailored(ds, kind, pipe, cfg, assignment)

    frozen_groups = dict(pipe.frozen_state())
    save_checkpoint(tmp_path / "frozen_before.ckpt", frozen_groups)
    finetune(ds, kind, pipe, cfg, assignment, stage1_state)
    save_checkpoint(tmp_path / "frozen_after.ckpt", pipe.frozen_state())
    ok = file_hash(tmp_path / "frozen_before.ckpt") == \
        file_hash(tmp_path / "frozen_after.ckpt")
    _line(7, ok, "tailored-backbone + universal-encoder checkpoints "
                 "hash-identical across stage 2")


@pytest.mark.slow
def test_criterion_08_alignment_diagnostic_direction():
    spec = desk_spec()
    kind = ModalityKind.VIDEO
    ds = generate_synthetic(spec, noise_profile("default"), seed=100)
    assignment = split(ds.records, spec, "cross-env", 0)
    cfg = _trend_train_config(0, stage1_epochs=12, stage2_epochs=4)
    pipe = ModalityPipeline(spec, kind, _desk_pipeline_config(), ds.vocab, 0)
    pre = evaluate_pipeline(ds, kind, pipe, assignment.test_ids, tasks=())
    stage1_state, _ = pretrain_tailored(ds, kind, pipe, cfg, assignment)
    finetune(ds, kind, pipe, cfg, assignment, stage1_state)
    post = evaluate_pipeline(ds, kind, pipe, assignment.test_ids, tasks=())
    sil_gain = post["cluster_separation"] - pre["cluster_separation"]
    gap_drop = post["alignment_gap"] - pre["alignment_gap"]
    ok = sil_gain >= 0.2 and gap_drop < 0.0
    _line(8, ok,
          f"silhouette {pre['cluster_separation']:.3f} -> "
          f"{post['cluster_separation']:.3f} (+{sil_gain:.3f} >= 0.2); "
          f"alignment gap {pre['alignment_gap']:.3f} -> "
          f"{post['alignment_gap']:.3f} (delta {gap_drop:+.3f} < 0)")


def test_criterion_09_schedule_correctness():
    stage1 = WarmupStepDecay(base_lr=0.1, warmup=10, decay_at=(60, 100),
                             total=120)
    ok = True
    for epoch in range(121):
        expected = 0.1 * min(1.0, epoch / 10.0)
        if epoch >= 60:
            expected *= 0.1
        if epoch >= 100:
            expected *= 0.1
        ok &= lr_at(stage1, epoch) == expected
    ok &= lr_at(stage1, 5) == 0.05 and lr_at(stage1, 0) == 0.0
    ok &= lr_at(stage1, 61) == pytest.approx(0.01) \
        and lr_at(stage1, 101) == pytest.approx(0.001)

    stage2 = WarmupConstant(max_lr=2e-5, warmup=2000)
    for step in range(0, 6001):
        expected = 2e-5 * min(1.0, step / 2000.0)
        ok &= lr_at(stage2, step) == expected
    _line(9, ok, "lr_at matches the closed-form reference at every integer "
                 "step of both stage schedules, warmup boundaries and decays "
                 "included")


@pytest.mark.slow
def test_criterion_10_determinism(tmp_path):
    cfg = RunConfig(preset="desk", setting="cross-env", modalities=["wifi_csi"],
                    arm="injection", seed=0, d_m=32, d_llm=48, heads=4,
                    projector_blocks=1, decoder_layers=1, max_len=128,
                    stage1_epochs=3, stage2_epochs=1, stage2_max_steps=8,
                    stage2_micro_batch=8)
    cfg_path = tmp_path / "config.yaml"
    cfg.save(cfg_path)
    hashes = []
    for tag in ("one", "two"):
        run_dir = tmp_path / f"run_{tag}"
        eval_dir = tmp_path / f"eval_{tag}"
        assert cli_main(["train", "--config", str(cfg_path),
                         "--out", str(run_dir)]) == 0
        assert cli_main(["eval", "--config", str(cfg_path), "--ckpt",
                         str(run_dir), "--out", str(eval_dir)]) == 0
        hashes.append((file_hash(eval_dir / "report.json"),
                       file_hash(eval_dir / "report.csv")))
    ok = hashes[0] == hashes[1]
    _line(10, ok, "two identically-seeded desk runs produced byte-identical "
                  "metric reports")
