"""Corpus BLEU-1..4, ROUGE-L, exact-match METEOR and per-indicator state accuracy.

All text metrics lowercase and split on whitespace, so scores do not depend
on the model's subword vocabulary.
"""

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import ContractError

BLEU_EPS = 1e-9
ROUGE_BETA = 1.2
METEOR_SEARCH_BUDGET = 200_000


def tokenize(text):
    if isinstance(text, (list, tuple)):
        return [str(t).lower() for t in text]
    return text.lower().split()


def _pairs(candidates, references):
    if len(candidates) == 0:
        raise ContractError("empty candidate list")
    if len(candidates) != len(references):
        raise ContractError(f"{len(candidates)} candidates vs {len(references)} references")
    return [(tokenize(c), tokenize(r)) for c, r in zip(candidates, references)]


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_n(candidates, references, n=4):
    """Corpus BLEU with uniform weights over orders 1..n and a brevity penalty.

    Orders with zero clipped matches use precision ε / max(total, 1), except
    that an order absent from both sides (every sentence too short) counts as
    precision 1, so identical corpora always score 1.
    """
    pairs = _pairs(candidates, references)
    log_p = 0.0
    for k in range(1, n + 1):
        match = total = ref_total = 0
        for cand, ref in pairs:
            cc, rc = _ngrams(cand, k), _ngrams(ref, k)
            match += sum(min(c, rc[g]) for g, c in cc.items())
            total += max(len(cand) - k + 1, 0)
            ref_total += max(len(ref) - k + 1, 0)
        if total == 0 and ref_total == 0:
            continue
        p = match / total if match > 0 else BLEU_EPS / max(total, 1)
        log_p += math.log(p) / n
    c = sum(len(cand) for cand, _ in pairs)
    r = sum(len(ref) for _, ref in pairs)
    if c == 0:
        return 0.0
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p)


def _ids(a, b):
    table = {}
    return ([table.setdefault(w, len(table)) for w in a],
            [table.setdefault(w, len(table)) for w in b])


def lcs(a, b):
    ia, ib = _ids(a, b)
    return kernels.lcs_length(np.asarray(ia, dtype=np.int64), np.asarray(ib, dtype=np.int64))


def rouge_l_pair(cand, ref, beta=ROUGE_BETA):
    if not cand or not ref:
        return 0.0
    m = lcs(cand, ref)
    if m == 0:
        return 0.0
    p, r = m / len(cand), m / len(ref)
    return (1 + beta ** 2) * p * r / (r + beta ** 2 * p)


def rouge_l(candidates, references):
    """Mean over pairs of the LCS F-measure (β = 1.2)."""
    pairs = _pairs(candidates, references)
    return sum(rouge_l_pair(c, r) for c, r in pairs) / len(pairs)


def count_chunks(alignment):
    """Number of runs of pairs adjacent in both sequences; ``alignment`` is [(i, j), ...]."""
    chunks = 0
    prev = None
    for i, j in sorted(alignment):
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def _greedy_alignment(cand, ref):
    """Repeatedly align the longest common run of unaligned tokens (earliest first)."""
    used_c = [False] * len(cand)
    used_r = [False] * len(ref)
    pairs = []
    while True:
        best = (0, 0, 0)
        for i in range(len(cand)):
            for j in range(len(ref)):
                k = 0
                while (i + k < len(cand) and j + k < len(ref) and not used_c[i + k]
                       and not used_r[j + k] and cand[i + k] == ref[j + k]):
                    k += 1
                if k > best[0]:
                    best = (k, i, j)
        k, i, j = best
        if k == 0:
            return pairs
        for d in range(k):
            used_c[i + d] = used_r[j + d] = True
            pairs.append((i + d, j + d))


def _min_chunk_alignment(cand, ref, max_matches):
    """Depth-first search for a maximum alignment with the fewest chunks.

    Starts from the greedy alignment as an upper bound; stops exploring after
    ``METEOR_SEARCH_BUDGET`` nodes and keeps the best alignment found so far.
    """
    greedy = _greedy_alignment(cand, ref)
    best = [count_chunks(greedy), greedy]
    positions = {}
    for j, w in enumerate(ref):
        positions.setdefault(w, []).append(j)
    used = [False] * len(ref)
    pairs = []
    budget = [METEOR_SEARCH_BUDGET]
    n = len(cand)

    def search(i, chunks, skips_left):
        if chunks >= best[0] or budget[0] <= 0:
            return
        budget[0] -= 1
        if len(pairs) == max_matches:
            best[0], best[1] = chunks, list(pairs)
            return
        if i == n:
            return
        last = pairs[-1] if pairs else None
        for j in positions.get(cand[i], ()):
            if used[j]:
                continue
            extends = last is not None and last == (i - 1, j - 1)
            used[j] = True
            pairs.append((i, j))
            search(i + 1, chunks + (0 if extends else 1), skips_left)
            pairs.pop()
            used[j] = False
        if skips_left > 0:
            search(i + 1, chunks, skips_left - 1)

    search(0, 0, n - max_matches)
    return best[1]


def meteor_pair(cand, ref):
    """Exact-match METEOR: F_mean · (1 − 0.5·(chunks/matches)³)."""
    if not cand or not ref:
        return 0.0
    rc = Counter(ref)
    matches = sum(min(c, rc[w]) for w, c in Counter(cand).items())
    if matches == 0:
        return 0.0
    chunks = count_chunks(_min_chunk_alignment(cand, ref, matches))
    p, r = matches / len(cand), matches / len(ref)
    fmean = 10 * p * r / (r + 9 * p)
    return fmean * (1.0 - 0.5 * (chunks / matches) ** 3)


def meteor_simplified(candidates, references):
    pairs = _pairs(candidates, references)
    return sum(meteor_pair(c, r) for c, r in pairs) / len(pairs)


def state_accuracy(predicted, labels, n_states=None):
    """Per-indicator accuracy and T×M×M confusion (rows: true state, columns: predicted)."""
    pred = np.asarray(predicted, dtype=np.int64)
    true = np.asarray(labels, dtype=np.int64)
    if pred.shape != true.shape or pred.ndim != 2:
        raise ContractError(f"predictions {pred.shape} and labels {true.shape} are misaligned")
    M = n_states or int(max(pred.max(), true.max()) + 1)
    T = pred.shape[1]
    conf = np.zeros((T, M, M), dtype=np.int64)
    for t in range(T):
        np.add.at(conf[t], (true[:, t], pred[:, t]), 1)
    acc = (pred == true).mean(axis=0)
    return acc, conf


@dataclass
class EvalReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge_l: float
    meteor: float
    n_pairs: int
    per_indicator_accuracy: dict = field(default_factory=dict)
    confusion: dict = field(default_factory=dict)
    meteor_variant: str = "METEOR-exact"

    def to_json(self, indent=2):
        return json.dumps(asdict(self), indent=indent)


def evaluate_texts(candidates, references):
    return {
        "bleu1": bleu_n(candidates, references, 1),
        "bleu2": bleu_n(candidates, references, 2),
        "bleu3": bleu_n(candidates, references, 3),
        "bleu4": bleu_n(candidates, references, 4),
        "rouge_l": rouge_l(candidates, references),
        "meteor": meteor_simplified(candidates, references),
        "n_pairs": len(candidates),
    }


def build_report(candidates, references, predicted_states=None, true_states=None, names=None,
                 n_states=None):
    scores = evaluate_texts(candidates, references)
    per, conf = {}, {}
    if predicted_states is not None:
        acc, cm = state_accuracy(predicted_states, true_states, n_states)
        names = names or [str(t) for t in range(len(acc))]
        per = {n: float(a) for n, a in zip(names, acc)}
        conf = {n: c.tolist() for n, c in zip(names, cm)}
    return EvalReport(per_indicator_accuracy=per, confusion=conf, **scores)
