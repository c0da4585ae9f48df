"""Synthetic multimodal generator and text curation.

Every sequence carries a latent code: the (unit-normalized) text anchor of
its action's base caption, plus subject and per-sample perturbations. The
renderers embed that code into each modality's payload through the canonical
bases, with environment- and subject-dependent nuisances and per-modality
noise (WiFi/RFID noisiest, video cleanest). Classes are therefore separable
exactly to the extent a model recovers text-anchored structure.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bases import patch_basis
from .data import (FIXED_CAPTION_PROMPT, CaptionSample, DatasetSpec, QASample,
                   SequenceRecord, build_records, load_payload, read_jsonl,
                   read_manifest, save_payload, write_jsonl, write_manifest)
from .errors import CurationError, ManifestError
from .modality import ModalityKind, PayloadGeometry, family_of
from .seeding import derive_rng
from .text import Vocab, text_anchor

LATENT_DIM = 24
_POINT_MAP_KEY = 0xB45E5  # fixed key: latent -> cluster-center map, run-independent


# -- captions and questions ----------------------------------------------------

ARCHETYPES = ["young adult", "tall person", "elderly person", "athletic person"]

ACTION_PHRASES = {
    "waving": "waving one hand high above the shoulder",
    "falling": "losing balance and falling toward the floor",
    "sitting": "lowering the body to sit on a chair",
    "standing": "rising from the chair to stand fully upright",
    "walking": "walking at an even pace across the room",
    "picking up": "bending down and picking up an object from the floor",
}

_DETAIL_ADJECTIVES = ["steady", "quick", "slow", "broad", "subtle", "vigorous",
                      "careful", "repeated"]
_DETAIL_PARTS = ["arm movements", "leg movements", "upper body motion",
                 "full body motion", "hand gestures", "torso shifts"]


def action_phrase(action: str) -> str:
    return ACTION_PHRASES.get(action, f"performing the {action} action")


def caption_for(action: str, archetype: str | None = None) -> str:
    """Deterministic caption template of (action, subject archetype)."""
    who = archetype or "person"
    key = zlib.crc32(action.encode("utf-8"))
    adj = _DETAIL_ADJECTIVES[key % len(_DETAIL_ADJECTIVES)]
    part = _DETAIL_PARTS[(key // 8) % len(_DETAIL_PARTS)]
    return (f"The {who} is {action_phrase(action)}, "
            f"showing {adj} {part} throughout the sequence.")


def base_caption(action: str) -> str:
    """Subject-neutral caption; its anchor is the class prototype."""
    return caption_for(action, None)


DEFAULT_QUESTION_BANK = [
    # two seed-style questions
    "What action is the person performing?",
    "Which activity from the list best matches the observed motion?",
    # thirteen paraphrase templates
    "What is the human doing in this sequence?",
    "Identify the action shown by the subject.",
    "Which action category does this movement belong to?",
    "From the given options, what action do you observe?",
    "What movement is the person carrying out?",
    "Tell me which action the subject performs.",
    "What kind of activity is captured here?",
    "Which of the listed actions is taking place?",
    "Name the action demonstrated by the person.",
    "What behavior does the subject exhibit in this clip?",
    "Choose the action that describes the person's motion.",
    "What activity is being performed by the human?",
    "Which action best describes what the person is doing?",
]


def validate_question_bank(bank: list[str]) -> list[str]:
    if len(bank) != 15:
        raise CurationError(f"question bank must hold 15 questions, got {len(bank)}")
    if len(set(bank)) != len(bank):
        raise CurationError("question bank entries must be unique")
    return list(bank)


def load_question_bank(path) -> list[str]:
    lines = [l.strip() for l in Path(path).read_text(encoding="utf-8").splitlines()]
    return validate_question_bank([l for l in lines if l])


# -- noise profiles ------------------------------------------------------------

@dataclass
class NoiseProfile:
    name: str = "default"
    noise: dict = field(default_factory=lambda: {
        ModalityKind.VIDEO: 0.22,
        ModalityKind.DEPTH: 0.28,
        ModalityKind.INFRARED: 0.34,
        ModalityKind.LIDAR: 0.18,
        ModalityKind.MMWAVE: 0.25,
        ModalityKind.WIFI_CSI: 0.60,
        ModalityKind.RFID: 0.80,
    })
    env_strength: float = 0.5
    subject_spread: float = 0.15
    subject_amp: float = 0.15
    latent_jitter: float = 0.08

    def sigma(self, kind: ModalityKind) -> float:
        return self.noise[kind]


def noise_profile(name: str = "default") -> NoiseProfile:
    if name == "default":
        return NoiseProfile()
    if name == "clean":
        prof = NoiseProfile(name="clean")
        prof.noise = {k: v * 0.2 for k, v in prof.noise.items()}
        prof.env_strength = 0.15
        prof.latent_jitter = 0.03
        return prof
    if name == "max-noise":
        prof = NoiseProfile(name="max-noise")
        prof.noise = {k: v * 3.0 for k, v in prof.noise.items()}
        prof.env_strength = 1.0
        prof.latent_jitter = 0.2
        return prof
    raise ManifestError(f"unknown noise profile {name!r}")


# -- latent machinery ----------------------------------------------------------

def class_prototypes(spec: DatasetSpec) -> np.ndarray:
    """Unit-norm anchor prefix per action, [C, LATENT_DIM]."""
    protos = []
    for action in spec.actions:
        a = text_anchor(base_caption(action), LATENT_DIM)
        protos.append(a / np.linalg.norm(a))
    return np.stack(protos)


@dataclass
class _Nuisance:
    subj_delta: np.ndarray
    subj_amp: float
    subj_phase: float
    env_axis: np.ndarray
    env_angle: float
    env_background: np.ndarray
    env_phases: np.ndarray
    env_offset: np.ndarray


def _nuisances(spec: DatasetSpec, profile: NoiseProfile, seed: int):
    subj, env = [], []
    for s in range(spec.n_subjects):
        rng = derive_rng(seed, "subject", s)
        subj.append((
            profile.subject_spread * rng.standard_normal(LATENT_DIM) / np.sqrt(LATENT_DIM),
            1.0 + profile.subject_amp * float(rng.uniform(-1.0, 1.0)),
            float(rng.uniform(0, 2 * np.pi)),
        ))
    for e in range(spec.n_envs):
        rng = derive_rng(seed, "env", e)
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        env.append((
            axis,
            profile.env_strength * float(rng.uniform(0.05, 0.18)),
            profile.env_strength * rng.standard_normal(3),   # image background terms
            profile.env_strength * rng.uniform(0, 2 * np.pi, LATENT_DIM),
            profile.env_strength * 0.12 * rng.standard_normal(3),
        ))
    return subj, env


def _sample_latent(proto: np.ndarray, nuis, rng: np.random.Generator,
                   profile: NoiseProfile) -> np.ndarray:
    delta, amp, _ = nuis
    jitter = profile.latent_jitter * rng.standard_normal(LATENT_DIM) / np.sqrt(LATENT_DIM)
    return amp * (proto + delta) + jitter


# -- renderers -------------------------------------------------------------------

_PATCH = 8


def _render_image(latent, geom: PayloadGeometry, rng, sigma, env_bg, subj_phase):
    atoms = patch_basis(_PATCH, LATENT_DIM)
    base = (latent @ atoms).reshape(_PATCH, _PATCH)
    nh, nw = geom.height // _PATCH, geom.width // _PATCH
    frames = np.empty((geom.frames, geom.height, geom.width, geom.channels),
                      dtype=np.float32)
    ii, jj = np.meshgrid(np.arange(nh), np.arange(nw), indexing="ij")
    rows = np.arange(geom.height)[:, None] / geom.height
    cols = np.arange(geom.width)[None, :] / geom.width
    background = env_bg[0] * 0.5 + env_bg[1] * rows + env_bg[2] * cols
    for t in range(geom.frames):
        phase = 2 * np.pi * t / geom.frames + subj_phase
        cx = (nh - 1) / 2 + 1.2 * np.sin(phase)
        cy = (nw - 1) / 2 + 1.2 * np.cos(phase)
        bump = np.exp(-((ii - cx) ** 2 + (jj - cy) ** 2) / 2.0)
        modulation = 0.6 + 0.8 * bump
        frame = np.kron(modulation, base) + background
        frame = frame + sigma * rng.standard_normal(frame.shape)
        frames[t, :, :, 0] = frame
    return frames


def _point_center_map() -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([_POINT_MAP_KEY]))
    return rng.standard_normal((8 * 3, LATENT_DIM)) / np.sqrt(LATENT_DIM)


_POINT_MAP = _point_center_map()


def _rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    ux, uy, uz = axis
    c, s = np.cos(angle), np.sin(angle)
    cross = np.array([[0, -uz, uy], [uz, 0, -ux], [-uy, ux, 0]])
    return c * np.eye(3) + s * cross + (1 - c) * np.outer(axis, axis)


def _render_points(latent, geom: PayloadGeometry, rng, sigma, env_axis,
                   env_angle, env_offset, subj_phase):
    centers = 0.9 * np.tanh((_POINT_MAP @ latent) * 3.0).reshape(8, 3)
    env_rot = _rotation(env_axis, env_angle)
    out = np.empty((geom.frames, geom.points, geom.point_dim), dtype=np.float32)
    for t in range(geom.frames):
        sway = _rotation(np.array([0.0, 0.0, 1.0]),
                         0.25 * np.sin(2 * np.pi * t / geom.frames + subj_phase))
        moved = (centers @ sway.T) @ env_rot.T + env_offset
        idx = np.arange(geom.points) % 8
        pts = moved[idx] + sigma * 0.4 * rng.standard_normal((geom.points, 3))
        out[t] = pts
    return out


def _render_sequence(latent, geom: PayloadGeometry, rng, sigma, env_phases):
    t = np.arange(geom.time_steps)[:, None] / geom.time_steps
    s = np.arange(geom.sensors)[None, :] / max(1, geom.sensors)
    signal = np.zeros((geom.time_steps, geom.sensors))
    for k in range(LATENT_DIM):
        freq = 1.0 + (k % 5)
        spat = 0.5 + 0.37 * (k // 5)
        signal += latent[k] * np.cos(2 * np.pi * (freq * t + spat * s) + env_phases[k])
    signal = signal / np.sqrt(LATENT_DIM)
    return (signal + sigma * rng.standard_normal(signal.shape)).astype(np.float32)


def render_payload(kind: ModalityKind, latent, geom: PayloadGeometry,
                   rng: np.random.Generator, profile: NoiseProfile,
                   subj_nuis, env_nuis) -> np.ndarray:
    sigma = profile.sigma(kind)
    _, _, subj_phase = subj_nuis
    env_axis, env_angle, env_bg, env_phases, env_offset = env_nuis
    fam = family_of(kind)
    if fam == "image":
        return _render_image(latent, geom, rng, sigma, env_bg, subj_phase)
    if fam == "point":
        return _render_points(latent, geom, rng, sigma, env_axis, env_angle,
                              env_offset, subj_phase)
    return _render_sequence(latent, geom, rng, sigma, env_phases)


# -- dataset assembly ------------------------------------------------------------

@dataclass
class SyntheticDataset:
    spec: DatasetSpec
    seed: int
    profile: NoiseProfile
    records: list[SequenceRecord]
    payloads: dict  # (sequence_id, ModalityKind) -> np.ndarray
    captions: dict  # sequence_id -> str
    qa: dict        # (sequence_id, modality value) -> QASample
    questions: list[str]
    vocab: Vocab

    def record_by_id(self, seq_id: str) -> SequenceRecord:
        if not hasattr(self, "_index"):
            self._index = {r.id: r for r in self.records}
        return self._index[seq_id]

    def payload(self, seq_id: str, kind: ModalityKind) -> np.ndarray:
        return self.payloads[(seq_id, kind)]

    def caption_sample(self, seq_id: str) -> CaptionSample:
        return make_caption_sample(seq_id, self.captions)

    def class_anchor_captions(self) -> list[str]:
        return [base_caption(a) for a in self.spec.actions]


def make_qa_sample(record: SequenceRecord, spec: DatasetSpec, bank: list[str],
                   rng: np.random.Generator, modality: ModalityKind) -> QASample:
    if not bank:
        raise CurationError("question bank is empty")
    if not 0 <= record.action_id < spec.n_actions:
        raise ManifestError(
            f"{record.id}: action {record.action_id} outside the category set")
    question = bank[int(rng.integers(0, len(bank)))]
    return QASample(
        question=question,
        action_list=list(spec.actions),
        answer=spec.actions[record.action_id],
        sequence_id=record.id,
        modality=modality.value,
    )


def make_caption_sample(seq_id: str, captions: dict) -> CaptionSample:
    if seq_id not in captions:
        raise CurationError(f"no caption available for sequence {seq_id}")
    return CaptionSample(FIXED_CAPTION_PROMPT, captions[seq_id], seq_id)


def dataset_vocab(spec: DatasetSpec, questions: list[str]) -> Vocab:
    texts = list(questions)
    texts.append(FIXED_CAPTION_PROMPT)
    texts.append("options:")  # connective used by the QA prompt format
    texts.extend(spec.actions)
    for action in spec.actions:
        for arch in ARCHETYPES + [None]:
            texts.append(caption_for(action, arch))
    return Vocab.from_texts(texts)


def generate_synthetic(spec: DatasetSpec, profile: NoiseProfile, seed: int,
                       payloads: bool = True) -> SyntheticDataset:
    """Build the whole dataset in memory; pure function of its arguments."""
    spec.validate()
    records = build_records(spec)
    protos = class_prototypes(spec)
    subj_nuis, env_nuis = _nuisances(spec, profile, seed)
    questions = validate_question_bank(DEFAULT_QUESTION_BANK)

    payload_map = {}
    captions = {}
    qa = {}
    for record in records:
        arch = ARCHETYPES[record.subject_id % len(ARCHETYPES)]
        captions[record.id] = caption_for(spec.actions[record.action_id], arch)
        qa_rng = derive_rng(seed, "qa", record.id)
        for kind in spec.modalities:
            qa[(record.id, kind.value)] = make_qa_sample(record, spec, questions,
                                                         qa_rng, kind)
        if not payloads:
            continue
        latent_rng = derive_rng(seed, "latent", record.id)
        latent = _sample_latent(protos[record.action_id],
                                subj_nuis[record.subject_id], latent_rng, profile)
        for kind in spec.modalities:
            rng = derive_rng(seed, "payload", record.id, kind.value)
            payload_map[(record.id, kind)] = render_payload(
                kind, latent, spec.geometry_for(kind), rng, profile,
                subj_nuis[record.subject_id], env_nuis[record.environment_id])

    return SyntheticDataset(
        spec=spec, seed=seed, profile=profile, records=records,
        payloads=payload_map, captions=captions, qa=qa,
        questions=questions, vocab=dataset_vocab(spec, questions),
    )


def load_dataset(in_dir, spec: DatasetSpec, payloads: bool = True,
                 profile: NoiseProfile | None = None, seed: int = 0
                 ) -> SyntheticDataset:
    """Rebuild a dataset from a written manifest tree."""
    root = Path(in_dir)
    records, rows = read_manifest(root / "manifest.jsonl")
    payload_map = {}
    if payloads:
        for row in rows:
            for mod, rel in row.get("payloads", {}).items():
                path = root / rel
                if path.exists():
                    payload_map[(row["id"], ModalityKind(mod))] = load_payload(path)
    captions = {r["sequence_id"]: r["caption"]
                for r in read_jsonl(root / "captions.jsonl")}
    qa = {}
    for r in read_jsonl(root / "qa.jsonl"):
        qa[(r["sequence_id"], r["modality"])] = QASample(**r)
    questions = load_question_bank(root / "questions.txt")
    vocab = Vocab.load(root / "vocab.txt")
    return SyntheticDataset(spec=spec, seed=seed,
                            profile=profile or NoiseProfile(),
                            records=records, payloads=payload_map,
                            captions=captions, qa=qa, questions=questions,
                            vocab=vocab)


_INCONTEXT_COUNTS = {"mmfi-like": 108, "xrf55-like": 110}


def write_dataset(ds: SyntheticDataset, out_dir, payloads: bool = True,
                  incontext_count: int | None = None) -> None:
    """Manifest tree: manifest, payload files, QA/caption JSONL, question bank,
    vocabulary, and the in-context {question, video, caption} seed samples
    (108/110 for the two full-scale presets, 12 for desk runs)."""
    if incontext_count is None:
        incontext_count = _INCONTEXT_COUNTS.get(ds.spec.name, 12)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload_paths = {}
    if payloads:
        for (seq_id, kind), arr in ds.payloads.items():
            rel = f"payloads/{seq_id}_{kind.value}.bin"
            save_payload(out / rel, arr)
            payload_paths.setdefault(seq_id, {})[kind.value] = rel
    write_manifest(out / "manifest.jsonl", ds.records, ds.spec,
                   payload_paths or None)
    write_jsonl(out / "qa.jsonl", [vars(s) for s in ds.qa.values()])
    write_jsonl(out / "captions.jsonl",
                [vars(ds.caption_sample(r.id)) for r in ds.records])
    step = max(1, len(ds.records) // max(1, incontext_count))
    incontext = []
    for r in ds.records[::step][:incontext_count]:
        incontext.append({
            "question": FIXED_CAPTION_PROMPT,
            "video": f"payloads/{r.id}_{ModalityKind.VIDEO.value}.bin",
            "caption": ds.captions[r.id],
        })
    write_jsonl(out / "incontext.jsonl", incontext)
    (out / "questions.txt").write_text("\n".join(ds.questions) + "\n",
                                       encoding="utf-8")
    ds.vocab.save(out / "vocab.txt")
