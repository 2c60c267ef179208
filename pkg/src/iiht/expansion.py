"""Indicator expansion: state → word phrase → bi-GRU → MLP → indicator information h_t."""

import numpy as np

from . import tensor as tn
from .errors import ContractError
from .nn import GRUCell, Linear, Module, normal
from .tensor import Tensor
from .tokenizer import IndicatorVocab


class PhraseTable:
    """Word ids of every (indicator, state) phrase, over the indicator vocabulary."""

    def __init__(self, templates, vocab=None):
        self.templates = templates
        self.vocab = vocab or IndicatorVocab(templates.words())
        T, M = templates.n_indicators, templates.n_states
        self.ids = [[self.vocab.encode(templates.phrase(t, m)) for m in range(M)] for t in range(T)]

    def indicator_to_words(self, t, state_row):
        """Word ids of indicator ``t`` in the argmax state of ``state_row``."""
        if not 0 <= t < len(self.ids):
            raise ContractError(f"unknown indicator id {t}")
        row = np.asarray(state_row, dtype=np.float64)
        if row.shape != (len(self.ids[t]),) or (row < 0).any() or abs(row.sum() - 1.0) > 1e-9:
            raise ContractError("state row must be a probability vector")
        return list(self.ids[t][int(row.argmax())])

    def batch(self, states):
        """(N,) indicator ids and (N,) state ids → padded (N, K) ids and lengths."""
        seqs = [self.ids[t][m] for t, m in states]
        lengths = np.array([len(s) for s in seqs])
        out = np.zeros((len(seqs), lengths.max()), dtype=np.int64)
        for i, s in enumerate(seqs):
            out[i, :len(s)] = s
        return out, lengths


class IndicatorExpansion(Module):
    """Bi-directional GRU over the phrase, both directions seeded by ŝ_t.

    The two final states are concatenated and projected back to ``hidden``
    before being added to ŝ_t; the MLP is affine → tanh → affine.
    """

    def __init__(self, n_words, hidden, rng):
        self.word_emb = normal(rng, (n_words, hidden), 1.0 / np.sqrt(hidden))
        self.gru_fwd = GRUCell(hidden, hidden, rng)
        self.gru_bwd = GRUCell(hidden, hidden, rng)
        self.combine = Linear(2 * hidden, hidden, rng)
        self.mlp_in = Linear(hidden, hidden, rng)
        self.mlp_out = Linear(hidden, hidden, rng)

    def run(self, cell, ids, lengths, h0):
        h = h0
        K = ids.shape[1]
        for k in range(K):
            x = tn.embedding(self.word_emb, ids[:, k])
            h_new = cell(x, h)
            live = (k < lengths).astype(np.float64)[:, None]
            if live.all():
                h = h_new
            else:
                h = h_new * live + h * (1.0 - live)
        return h

    def forward(self, ids, lengths, s_hat):
        """``ids`` (N, K) right-padded, ``lengths`` (N,), ``s_hat`` (N, e) → (N, e)."""
        ids = np.asarray(ids, dtype=np.int64)
        lengths = np.asarray(lengths)
        if ids.ndim != 2 or (lengths < 1).any():
            raise ContractError("every indicator phrase must be nonempty")
        rev = np.zeros_like(ids)
        for i, n in enumerate(lengths):
            rev[i, :n] = ids[i, :n][::-1]
        h_f = self.run(self.gru_fwd, ids, lengths, s_hat)
        h_b = self.run(self.gru_bwd, rev, lengths, s_hat)
        h_K = self.combine(tn.concat([h_f, h_b], axis=-1))
        return self.mlp_out(tn.tanh(self.mlp_in(s_hat + h_K)))

    def encode_indicator(self, word_ids, s_hat_t):
        """Single phrase and seed vector → h_t of length e."""
        if len(word_ids) == 0:
            raise ContractError("indicator phrase is empty")
        s = s_hat_t if isinstance(s_hat_t, Tensor) else Tensor(s_hat_t)
        out = self.forward(np.asarray([word_ids]), np.asarray([len(word_ids)]), s.reshape(1, -1))
        return out.reshape(-1)
