import itertools
import warnings
from collections import Counter, defaultdict

import numpy as np
import pytest

from senselm.errors import MetricError
from senselm.metrics import (MetricReport, accuracy, alignment_gap,
                             cluster_separation, meteor, min_chunk_alignment,
                             normalize_answer)
from senselm.text import tokenize_words


# -- independent brute-force alignment oracle ---------------------------------

def oracle_alignment(cand, ref):
    """Enumerate every maximal one-to-one alignment; return (matches, min chunks)."""
    cand_counts, ref_counts = Counter(cand), Counter(ref)
    need = {w: min(cand_counts[w], ref_counts[w]) for w in cand_counts
            if w in ref_counts}
    total = sum(need.values())
    if total == 0:
        return 0, 0
    cand_pos = defaultdict(list)
    ref_pos = defaultdict(list)
    for i, w in enumerate(cand):
        cand_pos[w].append(i)
    for j, w in enumerate(ref):
        ref_pos[w].append(j)

    per_word = []
    for w, k in need.items():
        options = []
        for cs in itertools.combinations(cand_pos[w], k):
            for rs in itertools.combinations(ref_pos[w], k):
                for perm in itertools.permutations(rs):
                    options.append(list(zip(cs, perm)))
        per_word.append(options)

    best = None
    for combo in itertools.product(*per_word):
        pairs = sorted(p for group in combo for p in group)
        chunks = 0
        prev = None
        for c, r in pairs:
            if prev is None or c != prev[0] + 1 or r != prev[1] + 1:
                chunks += 1
            prev = (c, r)
        best = chunks if best is None else min(best, chunks)
    return total, best


def oracle_meteor(candidate, reference):
    cand, ref = tokenize_words(candidate), tokenize_words(reference)
    if not cand or not ref:
        return 0.0
    m, ch = oracle_alignment(cand, ref)
    if m == 0:
        return 0.0
    p, r = m / len(cand), m / len(ref)
    fmean = 10 * p * r / (r + 9 * p)
    return fmean * (1 - 0.5 * (ch / m) ** 3)


def test_meteor_disjoint_tokens():
    assert meteor("alpha beta", "gamma delta") == 0.0


def test_meteor_identical_four_tokens():
    assert meteor("a b c d", "a b c d") == 0.9921875


def test_meteor_reversed_four_tokens():
    # P = R = 1 but four chunks: penalty 0.5
    assert meteor("d c b a", "a b c d") == 0.5


def test_meteor_self_score_formula_any_duplicate_free_caption():
    rng = np.random.default_rng(0)
    words = [f"w{i}" for i in range(30)]
    for _ in range(10):
        n = int(rng.integers(1, 12))
        caption = " ".join(rng.choice(words, size=n, replace=False))
        assert meteor(caption, caption) == pytest.approx(1 - 0.5 / n**3, abs=0)


def test_meteor_uses_candidate_side_precision():
    # asymmetric pair: long candidate is penalized through P, not R
    long_cand = meteor("a b c d", "a b")
    short_cand = meteor("a b", "a b c d")
    assert long_cand != short_cand
    m, p, r = 2, 2 / 4, 2 / 2
    assert long_cand == pytest.approx(10 * p * r / (r + 9 * p) * (1 - 0.5 * (1 / m) ** 3))


def test_meteor_empty_flags_and_scores_zero():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        assert meteor("", "a b") == 0.0
    assert caught


def test_meteor_matches_bruteforce_oracle_randomized():
    rng = np.random.default_rng(42)
    alphabet = [f"t{i}" for i in range(8)]
    for _ in range(60):
        cand = " ".join(rng.choice(alphabet, size=rng.integers(1, 13)))
        ref = " ".join(rng.choice(alphabet, size=rng.integers(1, 13)))
        got = min_chunk_alignment(tokenize_words(cand), tokenize_words(ref))
        want = oracle_alignment(tokenize_words(cand), tokenize_words(ref))
        assert got == want, (cand, ref)
        assert meteor(cand, ref) == oracle_meteor(cand, ref)


def test_accuracy_basic_and_normalized():
    assert accuracy(["a", "b"], ["a", "b"]) == 1.0
    assert accuracy(["a", "b", "c", "d"], ["a", "b", "c", "x"]) == 0.75
    assert accuracy(["Falling  "], ["falling"]) == 1.0
    assert normalize_answer("  Picking   Up ") == "picking up"


def test_accuracy_length_mismatch():
    with pytest.raises(MetricError):
        accuracy(["a"], ["a", "b"])


def test_accuracy_order_invariance():
    rng = np.random.default_rng(1)
    preds = [str(i % 3) for i in range(30)]
    labels = [str((i + 1) % 3) for i in range(30)]
    perm = rng.permutation(30)
    assert accuracy(preds, labels) == accuracy([preds[i] for i in perm],
                                               [labels[i] for i in perm])


def test_cluster_separation_blobs_and_symmetry():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(40, 4)) * 0.05 + np.array([10, 0, 0, 0])
    b = rng.normal(size=(40, 4)) * 0.05 - np.array([10, 0, 0, 0])
    x = np.vstack([a, b])
    y = np.array([0] * 40 + [1] * 40)
    assert cluster_separation(x, y) > 0.9

    same = rng.normal(size=(80, 4))
    labels = np.array([0, 1] * 40)
    assert abs(cluster_separation(same, labels)) < 0.1


def test_cluster_separation_permutation_invariant_and_singletons():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(21, 3))
    y = np.array([0] * 10 + [1] * 10 + [2])  # class 2 is a singleton
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        base = cluster_separation(x, y)
    assert caught
    perm = rng.permutation(21)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert cluster_separation(x[perm], y[perm]) == pytest.approx(base, abs=1e-12)


def test_alignment_gap_limits():
    rng = np.random.default_rng(4)
    anchors = rng.normal(size=(4, 8))
    # tokens exactly on their own anchors: gap = -(mean inter-class distance)
    y = np.array([0, 1, 2, 3])
    gap = alignment_gap(anchors, y, anchors)
    from senselm.metrics import _cosine_distance
    dist = _cosine_distance(anchors, anchors)
    inter = np.array([np.delete(dist[i], i).mean() for i in range(4)]).mean()
    assert gap == pytest.approx(-inter, abs=1e-12)

    # random tokens: near zero
    x = rng.normal(size=(400, 8))
    labels = rng.integers(0, 4, size=400)
    assert abs(alignment_gap(x, labels, anchors)) < 0.05

    # cosine scale invariance
    assert alignment_gap(2 * anchors, y, anchors) == pytest.approx(gap, abs=1e-12)


def test_alignment_gap_dimension_mismatch():
    with pytest.raises(MetricError):
        alignment_gap(np.ones((3, 4)), [0, 1, 0], np.ones((2, 5)))


def test_metric_report_average_and_formats():
    rep = MetricReport(config_hash="abc")
    rep.add("qa", "video", 0.9, count=10)
    rep.add("qa", "wifi_csi", 0.5, count=10)
    rep.add("caption", "video", 0.25)
    assert rep.average("qa") == pytest.approx(0.7, abs=1e-12)
    data = rep.as_dict()
    assert data["tasks"]["qa"]["Avg"] == pytest.approx(0.7, abs=1e-12)
    csv_text = rep.to_csv()
    assert "task" in csv_text and "Avg" in csv_text
    assert rep.to_json() == MetricReport(scores=rep.scores, counts=rep.counts,
                                         config_hash="abc").to_json()
