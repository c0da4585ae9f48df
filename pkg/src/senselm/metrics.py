"""Evaluation metrics: exact-match accuracy, original exact-match METEOR,
and the cluster/alignment diagnostics.

METEOR here is the original formulation with exact unigram matching only:
over a maximal one-to-one alignment that minimizes the number of chunks,
Fmean = 10PR/(R+9P), penalty = 0.5*(chunks/matches)^3, score =
Fmean*(1-penalty). The chunk-minimal alignment is found exactly by
branch-and-bound; tests hold an independent brute-force enumerator against it.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import MetricError
from .text import tokenize_words


def normalize_answer(text: str) -> str:
    """Lowercase, trim, and collapse whitespace for QA string matching."""
    return " ".join(text.lower().split())


def accuracy(predictions, labels) -> float:
    if len(predictions) != len(labels) or not labels:
        raise MetricError(
            f"accuracy needs equal non-empty lengths, got {len(predictions)} "
            f"and {len(labels)}")
    hits = sum(normalize_answer(str(p)) == normalize_answer(str(l))
               for p, l in zip(predictions, labels))
    return hits / len(labels)


# -- METEOR -----------------------------------------------------------------

def _chunk_count(pairs: list[tuple[int, int]]) -> int:
    """Chunks in an alignment given (cand_pos, ref_pos) pairs."""
    pairs = sorted(pairs)
    chunks = 0
    prev = None
    for c, r in pairs:
        if prev is None or c != prev[0] + 1 or r != prev[1] + 1:
            chunks += 1
        prev = (c, r)
    return chunks


def min_chunk_alignment(cand: list[str], ref: list[str]) -> tuple[int, int]:
    """(matches, chunks) of a maximal alignment with the fewest chunks.

    Matches per word are forced to min(count in cand, count in ref); the
    branch-and-bound searches only over which occurrences pair up.
    """
    cand_counts = Counter(cand)
    ref_counts = Counter(ref)
    need = {w: min(cand_counts[w], ref_counts[w]) for w in cand_counts
            if w in ref_counts}
    total = sum(need.values())
    if total == 0:
        return 0, 0

    ref_pos = defaultdict(list)
    for j, w in enumerate(ref):
        if w in need:
            ref_pos[w].append(j)
    remaining = Counter()  # occurrences of each needed word at index >= i
    suffix = [None] * (len(cand) + 1)
    suffix[len(cand)] = Counter()
    for i in range(len(cand) - 1, -1, -1):
        remaining = suffix[i + 1].copy()
        if cand[i] in need:
            remaining[cand[i]] += 1
        suffix[i] = remaining

    best = [total + 1]

    def search(i, left: Counter, used: int, last_c: int, last_r: int, chunks: int):
        if chunks >= best[0]:
            return
        if sum(left.values()) == 0:
            best[0] = chunks
            return
        if i == len(cand):
            return
        w = cand[i]
        if w in need and left[w] > 0:
            # try continuing the current chunk first for tighter pruning
            options = ref_pos[w]
            ordered = sorted(options, key=lambda r: (not (i == last_c + 1 and
                                                          r == last_r + 1), r))
            for r in ordered:
                if used & (1 << r):
                    continue
                cont = i == last_c + 1 and r == last_r + 1
                left[w] -= 1
                search(i + 1, left, used | (1 << r), i, r,
                       chunks + (0 if cont else 1))
                left[w] += 1
        # skipping i is allowed only if later occurrences can still cover w
        if w not in need or suffix[i + 1][w] >= left[w]:
            search(i + 1, left, used, last_c, last_r, chunks)

    search(0, Counter(need), 0, -2, -2, 0)
    return total, best[0]


def meteor(candidate: str, reference: str) -> float:
    cand = tokenize_words(candidate)
    ref = tokenize_words(reference)
    if not cand or not ref:
        warnings.warn("meteor on empty candidate or reference; scoring 0")
        return 0.0
    matches, chunks = min_chunk_alignment(cand, ref)
    if matches == 0:
        return 0.0
    precision = matches / len(cand)
    recall = matches / len(ref)
    fmean = 10.0 * precision * recall / (recall + 9.0 * precision)
    penalty = 0.5 * (chunks / matches) ** 3
    return fmean * (1.0 - penalty)


# -- cluster / alignment diagnostics ------------------------------------------

def cluster_separation(vectors, labels) -> float:
    """Mean silhouette coefficient under Euclidean distance.

    Singleton classes are excluded with a warning; at least two classes with
    two or more members must remain.
    """
    x = np.asarray(vectors, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise MetricError("cluster_separation needs [n, d] vectors and n labels")
    counts = Counter(y.tolist())
    singletons = {c for c, n in counts.items() if n < 2}
    if singletons:
        warnings.warn(f"excluding singleton classes {sorted(singletons)}")
        keep = ~np.isin(y, list(singletons))
        x, y = x[keep], y[keep]
    classes = sorted(set(y.tolist()))
    if len(classes) < 2:
        raise MetricError("need at least two classes with two or more points")
    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    scores = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        same = (y == y[i])
        a = dist[i, same].sum() / (same.sum() - 1)
        b = min(dist[i, y == c].mean() for c in classes if c != y[i])
        scores[i] = 0.0 if max(a, b) == 0 else (b - a) / max(a, b)
    return float(scores.mean())


def _cosine_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    nb = np.linalg.norm(b, axis=-1, keepdims=True)
    cos = (a / np.maximum(na, 1e-12)) @ (b / np.maximum(nb, 1e-12)).T
    return 1.0 - cos


def alignment_gap(sample_vectors, sample_classes, class_anchors) -> float:
    """Mean cosine distance to the own-class anchor minus the mean distance
    to other-class anchors; lower is better aligned."""
    x = np.asarray(sample_vectors, dtype=np.float64)
    anchors = np.asarray(class_anchors, dtype=np.float64)
    y = np.asarray(sample_classes, dtype=np.int64)
    if x.ndim != 2 or anchors.ndim != 2:
        raise MetricError("alignment_gap needs [n, d] samples and [C, d] anchors")
    if x.shape[1] != anchors.shape[1]:
        raise MetricError(
            f"sample width {x.shape[1]} != anchor width {anchors.shape[1]}")
    if anchors.shape[0] < 2:
        raise MetricError("need at least two class anchors")
    dist = _cosine_distance(x, anchors)  # [n, C]
    own = dist[np.arange(x.shape[0]), y]
    total = dist.sum(axis=1)
    other = (total - own) / (anchors.shape[0] - 1)
    return float((own - other).mean())


# -- report container -----------------------------------------------------------

@dataclass
class MetricReport:
    """Per-modality scores per task, with arithmetic-mean Avg columns."""

    scores: dict = field(default_factory=dict)   # task -> {modality: score}
    counts: dict = field(default_factory=dict)   # task -> sample count
    config_hash: str = ""
    extras: dict = field(default_factory=dict)   # free-form diagnostics

    def add(self, task: str, modality: str, value: float, count: int = 0):
        self.scores.setdefault(task, {})[modality] = float(value)
        if count:
            self.counts[task] = self.counts.get(task, 0) + count

    def average(self, task: str) -> float:
        row = self.scores[task]
        return float(np.mean(list(row.values())))

    def as_dict(self) -> dict:
        tasks = {}
        for task, row in sorted(self.scores.items()):
            tasks[task] = {**{m: row[m] for m in sorted(row)},
                           "Avg": self.average(task)}
        return {"config_hash": self.config_hash, "tasks": tasks,
                "counts": dict(sorted(self.counts.items())),
                "extras": dict(sorted(self.extras.items()))}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        modalities = sorted({m for row in self.scores.values() for m in row})
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["task"] + modalities + ["Avg"])
        for task in sorted(self.scores):
            row = self.scores[task]
            writer.writerow([task] +
                            [f"{row[m]:.6f}" if m in row else "" for m in modalities] +
                            [f"{self.average(task):.6f}"])
        return buf.getvalue()
