"""Dataset specs, manifests, payload files, benchmark splits, and the QA /
caption record formats.

Preset per-subject sequence counts are chosen so the canonical held-out
subject and environment lists reproduce the published train/test sizes
exactly (Random 12,336/4,112 and 14,850/4,950; CrossSub 11,657/4,791 and
14,300/5,500; CrossEnv 12,565/3,883 and 16,500/3,300).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ManifestError, SplitError
from .modality import ModalityKind, PayloadGeometry
from .seeding import derive_rng

SETTINGS = ("random", "cross-sub", "cross-env")


@dataclass
class DatasetSpec:
    name: str
    actions: list[str]
    n_subjects: int
    n_envs: int
    frames: int
    modalities: list[ModalityKind]
    per_subject_counts: list[int]
    subject_env: list[int]
    heldout_subjects: list[int]
    heldout_envs: list[int]
    geometry: dict = field(default_factory=dict)  # ModalityKind -> PayloadGeometry

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def sequence_count(self) -> int:
        return sum(self.per_subject_counts)

    def validate(self):
        if len(self.per_subject_counts) != self.n_subjects:
            raise ManifestError("per-subject counts must cover every subject")
        if len(self.subject_env) != self.n_subjects:
            raise ManifestError("subject_env must cover every subject")
        if any(e >= self.n_envs for e in self.subject_env):
            raise ManifestError("subject_env references an unknown environment")
        return self

    def geometry_for(self, kind: ModalityKind) -> PayloadGeometry:
        return self.geometry.get(kind, PayloadGeometry(frames=self.frames))


@dataclass
class SequenceRecord:
    id: str
    action_id: int
    subject_id: int
    environment_id: int


@dataclass
class SplitAssignment:
    setting: str
    train_ids: list[str]
    test_ids: list[str]
    seed: int

    def validate_partition(self, all_ids) -> "SplitAssignment":
        train, test = set(self.train_ids), set(self.test_ids)
        if train & test:
            raise SplitError("train and test overlap")
        if train | test != set(all_ids):
            raise SplitError("split does not cover the manifest")
        return self


@dataclass
class QASample:
    question: str
    action_list: list[str]
    answer: str
    sequence_id: str
    modality: str


@dataclass
class CaptionSample:
    question: str
    caption: str
    sequence_id: str


FIXED_CAPTION_PROMPT = "Please give detailed descriptions of human's action."


# -- presets -----------------------------------------------------------------

DESK_ACTIONS = ["waving", "falling", "sitting", "standing", "walking", "picking up"]


def _image_geom(frames):
    return PayloadGeometry(frames=frames, height=32, width=32, channels=1)


def _point_geom(frames):
    return PayloadGeometry(frames=frames, points=96, point_dim=3)


def _seq_geom(frames, sensors):
    return PayloadGeometry(frames=frames, time_steps=frames * 20, sensors=sensors)


def desk_spec(n_actions: int = 6, modalities=None) -> DatasetSpec:
    """Small trainable preset: 8 subjects (two per environment), 54 each."""
    modalities = modalities or [ModalityKind.VIDEO, ModalityKind.LIDAR,
                                ModalityKind.WIFI_CSI]
    frames = 5
    geometry = {}
    for m in modalities:
        if m in (ModalityKind.WIFI_CSI,):
            geometry[m] = _seq_geom(frames, 30)
        elif m is ModalityKind.RFID:
            geometry[m] = _seq_geom(frames, 8)
        elif m in (ModalityKind.LIDAR, ModalityKind.MMWAVE):
            geometry[m] = _point_geom(frames)
        else:
            geometry[m] = _image_geom(frames)
    return DatasetSpec(
        name="desk",
        actions=DESK_ACTIONS[:n_actions],
        n_subjects=8,
        n_envs=4,
        frames=frames,
        modalities=list(modalities),
        per_subject_counts=[54] * 8,
        subject_env=[0, 0, 1, 1, 2, 2, 3, 3],
        heldout_subjects=[3, 7],
        heldout_envs=[3],
        geometry=geometry,
    ).validate()


def mmfi_like_spec() -> DatasetSpec:
    """16,448 sequences over 27 actions, 40 subjects, 4 environments."""
    counts = [0] * 40
    env0_2_nonheld = [s for s in range(30) if s % 10 < 7]   # 21 subjects
    env0_2_held = [s for s in range(30) if s % 10 >= 7]     # 9 subjects
    for i, s in enumerate(env0_2_nonheld):
        counts[s] = 426 if i < 16 else 425
    for i, s in enumerate(env0_2_held):
        counts[s] = 403 if i < 6 else 402
    for s in range(30, 37):
        counts[s] = 388
    for s in range(37, 40):
        counts[s] = 389
    assert sum(counts) == 16448
    frames = 5
    modalities = [ModalityKind.VIDEO, ModalityKind.DEPTH, ModalityKind.LIDAR,
                  ModalityKind.MMWAVE, ModalityKind.WIFI_CSI]
    geometry = {
        ModalityKind.VIDEO: _image_geom(frames),
        ModalityKind.DEPTH: _image_geom(frames),
        ModalityKind.LIDAR: _point_geom(frames),
        ModalityKind.MMWAVE: _point_geom(frames),
        ModalityKind.WIFI_CSI: _seq_geom(frames, 30),
    }
    return DatasetSpec(
        name="mmfi-like",
        actions=[f"activity {i + 1:02d}" for i in range(27)],
        n_subjects=40,
        n_envs=4,
        frames=frames,
        modalities=modalities,
        per_subject_counts=counts,
        subject_env=[s // 10 for s in range(40)],
        heldout_subjects=env0_2_held + [37, 38, 39],
        heldout_envs=[3],
        geometry=geometry,
    ).validate()


def xrf55_like_spec() -> DatasetSpec:
    """19,800 sequences over 55 actions, 19 subjects, 4 environments."""
    counts = [1100] * 15 + [825] * 4
    assert sum(counts) == 19800
    frames = 10
    modalities = [ModalityKind.VIDEO, ModalityKind.DEPTH, ModalityKind.INFRARED,
                  ModalityKind.RFID, ModalityKind.WIFI_CSI]
    geometry = {
        ModalityKind.VIDEO: _image_geom(frames),
        ModalityKind.DEPTH: _image_geom(frames),
        ModalityKind.INFRARED: _image_geom(frames),
        ModalityKind.RFID: _seq_geom(frames, 8),
        ModalityKind.WIFI_CSI: _seq_geom(frames, 30),
    }
    return DatasetSpec(
        name="xrf55-like",
        actions=[f"activity {i + 1:02d}" for i in range(55)],
        n_subjects=19,
        n_envs=4,
        frames=frames,
        modalities=modalities,
        per_subject_counts=counts,
        subject_env=[0] * 5 + [1] * 5 + [2] * 5 + [3] * 4,
        heldout_subjects=[3, 4, 8, 9, 13],
        heldout_envs=[3],
        geometry=geometry,
    ).validate()


PRESETS = {
    "desk": desk_spec,
    "mmfi-like": mmfi_like_spec,
    "xrf55-like": xrf55_like_spec,
}


def build_records(spec: DatasetSpec) -> list[SequenceRecord]:
    """Deterministic manifest skeleton; actions cycle within each subject."""
    records = []
    n = 0
    for subj, count in enumerate(spec.per_subject_counts):
        env = spec.subject_env[subj]
        for j in range(count):
            action = (j + subj) % spec.n_actions
            records.append(SequenceRecord(f"seq{n:06d}", action, subj, env))
            n += 1
    return records


# -- splits --------------------------------------------------------------------

def split(records: list[SequenceRecord], spec: DatasetSpec, setting: str,
          seed: int) -> SplitAssignment:
    """Benchmark split; pure function of (records, spec, setting, seed)."""
    if setting not in SETTINGS:
        raise SplitError(f"unknown setting {setting!r}; expected one of {SETTINGS}")
    all_ids = [r.id for r in records]
    if setting == "random":
        order = np.array(all_ids)
        derive_rng(seed, "split", "random").shuffle(order)
        n_test = len(order) // 4  # 3:1 with ties resolved toward train
        test = set(order[:n_test].tolist())
        train_ids = [i for i in all_ids if i not in test]
        test_ids = [i for i in all_ids if i in test]
    elif setting == "cross-sub":
        held = set(spec.heldout_subjects)
        train_ids = [r.id for r in records if r.subject_id not in held]
        test_ids = [r.id for r in records if r.subject_id in held]
    else:
        held = set(spec.heldout_envs)
        train_ids = [r.id for r in records if r.environment_id not in held]
        test_ids = [r.id for r in records if r.environment_id in held]
    if not train_ids or not test_ids:
        raise SplitError(f"{setting} split left train={len(train_ids)} "
                         f"test={len(test_ids)} sequences")
    return SplitAssignment(setting, train_ids, test_ids, seed).validate_partition(all_ids)


# -- manifest and payload files ---------------------------------------------

_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES_BY_KIND = {np.dtype("float32"): 1, np.dtype("float64"): 2}
_PAYLOAD_MAGIC = b"SLMB"


def save_payload(path, array: np.ndarray) -> None:
    """Little-endian binary: magic, rank u32, extents u32[rank], dtype u32, data."""
    arr = np.ascontiguousarray(array)
    code = _CODES_BY_KIND.get(arr.dtype)
    if code is None:
        arr = arr.astype(np.float32)
        code = 1
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_PAYLOAD_MAGIC)
        fh.write(np.uint32(arr.ndim).tobytes())
        fh.write(np.asarray(arr.shape, dtype="<u4").tobytes())
        fh.write(np.uint32(code).tobytes())
        fh.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes())


def load_payload(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(4) != _PAYLOAD_MAGIC:
            raise ManifestError(f"{path}: not a payload file")
        rank = int(np.frombuffer(fh.read(4), "<u4")[0])
        shape = tuple(np.frombuffer(fh.read(4 * rank), "<u4").tolist())
        code = int(np.frombuffer(fh.read(4), "<u4")[0])
        if code not in _DTYPE_CODES:
            raise ManifestError(f"{path}: unknown dtype code {code}")
        data = np.frombuffer(fh.read(), _DTYPE_CODES[code])
    return data.reshape(shape).astype(_DTYPE_CODES[code].newbyteorder("="))


def write_manifest(path, records: list[SequenceRecord], spec: DatasetSpec,
                   payload_paths: dict | None = None) -> None:
    """One JSON object per line: id, action, subject, env, payload path map."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            row = {
                "id": r.id,
                "action": r.action_id,
                "action_name": spec.actions[r.action_id],
                "subject": r.subject_id,
                "env": r.environment_id,
                "payloads": (payload_paths or {}).get(
                    r.id, {m.value: f"payloads/{r.id}_{m.value}.bin"
                           for m in spec.modalities}),
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_manifest(path) -> tuple[list[SequenceRecord], list[dict]]:
    records, rows = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            for key in ("id", "action", "subject", "env"):
                if key not in row:
                    raise ManifestError(f"manifest row missing {key!r}")
            records.append(SequenceRecord(row["id"], row["action"],
                                          row["subject"], row["env"]))
            rows.append(row)
    return records, rows


def write_jsonl(path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(json.loads(line))
    return out
