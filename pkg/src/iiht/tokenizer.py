"""Byte-pair subword vocabulary for reports and a word vocabulary for indicator phrases.

Text is split into pieces at spaces (each space stays attached to the
following word, drawn as ``▁``), so merges never cross a word boundary and
decoding is the exact inverse of encoding.
"""

import logging
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")
SPACE = "▁"
VOCAB_HEADER = "bpe-vocab v1 size={}"

_PIECE = re.compile(r" ?[^ ]+| +")
_ESCAPES = {"\\": "\\\\", "\n": "\\n", "\r": "\\r", "\t": "\\t"}
_UNESCAPE = re.compile(r"\\(.)")


def _escape(tok):
    return "".join(_ESCAPES.get(ch, ch) for ch in tok)


def _unescape(s):
    table = {"\\": "\\", "n": "\n", "r": "\r", "t": "\t"}
    return _UNESCAPE.sub(lambda m: table.get(m.group(1), m.group(1)), s)


def split_pieces(text):
    return _PIECE.findall(text)


@dataclass
class SubwordVocab:
    tokens: list
    merges: list
    converged: bool = False
    _ids: dict = field(default=None, init=False, repr=False, compare=False)
    _ranks: dict = field(default=None, init=False, repr=False, compare=False)
    _cache: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != SPECIALS:
            raise ValueError("specials must occupy ids 0-3")
        self._ids = {t: i for i, t in enumerate(self.tokens)}
        if len(self._ids) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self._ranks = {}
        for rank, (a, b) in enumerate(self.merges):
            if a + b not in self._ids:
                raise ValueError(f"merge output {a + b!r} missing from tokens")
            self._ranks[(self._ids[a], self._ids[b])] = (rank, self._ids[a + b])
        self._cache = {}

    @property
    def size(self):
        return len(self.tokens)

    def __len__(self):
        return len(self.tokens)

    def token_id(self, tok):
        return self._ids.get(tok, UNK)

    def _symbols(self, piece):
        out = []
        for ch in piece:
            if ch == SPACE:
                out.append(UNK)
            else:
                out.append(self._ids.get(SPACE if ch == " " else ch, UNK))
        return np.asarray(out, dtype=np.int64)

    def _encode_piece(self, piece):
        hit = self._cache.get(piece)
        if hit is not None:
            return hit
        seq = self._symbols(piece)
        ranks = self._ranks
        while len(seq) > 1:
            best = None
            for a, b in zip(seq[:-1].tolist(), seq[1:].tolist()):
                r = ranks.get((a, b))
                if r is not None and (best is None or r[0] < best[0][0]):
                    best = (r, a, b)
            if best is None:
                break
            (_, new), a, b = best
            seq = kernels.bpe_merge(seq, a, b, new)
        ids = [int(i) for i in seq]
        self._cache[piece] = ids
        return ids

    def encode(self, text):
        ids = []
        for piece in split_pieces(text):
            ids.extend(self._encode_piece(piece))
        return ids

    def decode(self, ids):
        parts = []
        for i in ids:
            i = int(i)
            if i == UNK:
                parts.append("�")
            elif i > UNK:
                parts.append(self.tokens[i])
        return "".join(parts).replace(SPACE, " ")

    # -- files ----------------------------------------------------------

    def save(self, vocab_path, merges_path):
        with open(vocab_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(VOCAB_HEADER.format(self.size) + "\n")
            for tok in self.tokens:
                fh.write(_escape(tok) + "\n")
        with open(merges_path, "w", encoding="utf-8", newline="\n") as fh:
            for a, b in self.merges:
                fh.write(f"{_escape(a)} {_escape(b)}\n")

    @classmethod
    def load(cls, vocab_path, merges_path):
        with open(vocab_path, encoding="utf-8", newline="\n") as fh:
            lines = fh.read().split("\n")
        m = re.fullmatch(r"bpe-vocab v1 size=(\d+)", lines[0])
        if not m:
            raise ValueError(f"{vocab_path}: bad header {lines[0]!r}")
        size = int(m.group(1))
        tokens = [_unescape(t) for t in lines[1:1 + size]]
        if len(tokens) != size:
            raise ValueError(f"{vocab_path}: expected {size} tokens, found {len(tokens)}")
        with open(merges_path, encoding="utf-8", newline="\n") as fh:
            merges = [tuple(_unescape(p) for p in line.split(" ")) for line in fh.read().split("\n") if line]
        return cls(tokens, merges)

    def to_dict(self):
        return {"tokens": list(self.tokens), "merges": [list(m) for m in self.merges]}

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["tokens"]), [tuple(m) for m in d["merges"]])


def train_bpe(corpus, target_size=512):
    """Learn merges by highest pair count, ties broken by the smaller (left, right) pair.

    Stops at ``target_size`` tokens or when no adjacent pair remains; in the
    latter case the returned vocabulary has ``converged=True``.
    """
    if not corpus:
        raise ValueError("corpus is empty")
    words = Counter()
    for doc in corpus:
        for piece in split_pieces(doc.lower()):
            words[piece.replace(" ", SPACE)] += 1
    alphabet = sorted({ch for w in words for ch in w})
    if target_size <= len(alphabet) + len(SPECIALS):
        raise ValueError(
            f"target_size {target_size} must exceed {len(alphabet)} symbols + {len(SPECIALS)} specials")
    tokens = list(SPECIALS) + alphabet
    ids = {t: i for i, t in enumerate(tokens)}
    seqs = [(np.asarray([ids[c] for c in w], dtype=np.int64), n) for w, n in sorted(words.items())]
    merges = []
    converged = False
    while len(tokens) < target_size:
        pairs = Counter()
        for seq, n in seqs:
            for a, b in zip(seq[:-1].tolist(), seq[1:].tolist()):
                pairs[(a, b)] += n
        if not pairs:
            converged = True
            break
        top = max(pairs.values())
        a, b = min((tokens[a], tokens[b]) for (a, b), c in pairs.items() if c == top)
        ia, ib = ids[a], ids[b]
        new_tok = a + b
        if new_tok in ids:
            new_id = ids[new_tok]
        else:
            new_id = len(tokens)
            tokens.append(new_tok)
            ids[new_tok] = new_id
        merges.append((a, b))
        seqs = [(kernels.bpe_merge(s, ia, ib, new_id) if len(s) > 1 else s, n) for s, n in seqs]
    if converged:
        log.warning("BPE reached a fixpoint at %d tokens (target %d)", len(tokens), target_size)
    return SubwordVocab(tokens, merges, converged=converged)


class IndicatorVocab:
    """Whole-word vocabulary for indicator phrases (no specials besides padding)."""

    def __init__(self, words):
        self.words = ["<pad>"] + sorted(set(words) - {"<pad>"})
        self._ids = {w: i for i, w in enumerate(self.words)}

    def __len__(self):
        return len(self.words)

    def encode(self, words):
        try:
            return [self._ids[w] for w in words]
        except KeyError as exc:
            raise KeyError(f"word {exc.args[0]!r} not in indicator vocabulary") from None

    def decode(self, ids):
        return [self.words[i] for i in ids]
