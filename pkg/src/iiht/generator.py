"""Causal transformer stack conditioned on a prefix memory [visual, h_1..h_T]."""

import numpy as np

from . import tensor as tn
from .errors import ContractError
from .nn import LayerNorm, Linear, Module, normal, param
from .tensor import Tensor

MASK_VALUE = -1e9
LOG_CLAMP = 1e-12


def sinusoid(n, dim):
    pos = np.arange(n)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def prefix_mask(n_memory, n_tokens):
    """Boolean (L, L) mask of *forbidden* attention edges.

    Memory rows see only memory; token rows see all memory and tokens up to
    and including themselves.
    """
    L = n_memory + n_tokens
    i = np.arange(L)[:, None]
    j = np.arange(L)[None, :]
    allowed = (j < n_memory) | ((j >= n_memory) & (j <= i))
    return ~allowed


class Block(Module):
    """Pre-norm masked multi-head self-attention and feed-forward sublayers."""

    def __init__(self, hidden, heads, rng, dropout=0.1):
        if hidden % heads:
            raise ValueError(f"hidden size {hidden} not divisible by {heads} heads")
        self.ln1 = LayerNorm(hidden)
        self.qkv = Linear(hidden, 3 * hidden, rng)
        self.out = Linear(hidden, hidden, rng, std=1.0 / np.sqrt(2 * hidden))
        self.ln2 = LayerNorm(hidden)
        self.ff1 = Linear(hidden, 4 * hidden, rng)
        self.ff2 = Linear(4 * hidden, hidden, rng, std=1.0 / np.sqrt(8 * hidden))
        self._heads = heads
        self._dropout = dropout

    def attention(self, x, mask):
        B, L, e = x.shape
        H = self._heads
        dh = e // H
        qkv = self.qkv(x).reshape(B, L, 3, H, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = tn.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
        weights = tn.softmax(tn.masked_fill(scores, mask, MASK_VALUE), axis=-1)
        ctx = tn.matmul(weights, v).transpose(0, 2, 1, 3).reshape(B, L, e)
        return self.out(ctx)

    def step(self, x, cache):
        """Incremental pass for one new row per sequence; ``cache`` holds (k, v) arrays."""
        B, _, e = x.shape
        H = self._heads
        dh = e // H
        qkv = self.qkv(self.ln1(x)).data.reshape(B, 1, 3, H, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        if cache:
            k = np.concatenate([cache[0], k], axis=2)
            v = np.concatenate([cache[1], v], axis=2)
        cache[:] = [k, v]
        scores = np.matmul(q, np.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dh))
        weights = tn.softmax(Tensor(scores), axis=-1).data
        ctx = np.matmul(weights, v).transpose(0, 2, 1, 3).reshape(B, 1, e)
        x = x + self.out(Tensor(ctx))
        return x + self.ff2(tn.relu(self.ff1(self.ln2(x))))

    def prime(self, memory):
        """Full pass over memory rows only; returns the output rows and their (k, v)."""
        B, L, e = memory.shape
        H = self._heads
        dh = e // H
        qkv = self.qkv(self.ln1(memory)).data.reshape(B, L, 3, H, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = np.matmul(q, np.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dh))
        weights = tn.softmax(Tensor(scores), axis=-1).data
        ctx = np.matmul(weights, v).transpose(0, 2, 1, 3).reshape(B, L, e)
        x = memory + self.out(Tensor(ctx))
        return x + self.ff2(tn.relu(self.ff1(self.ln2(x)))), [k, v]

    def forward(self, x, mask, rng=None):
        train = self.training and rng is not None
        x = x + tn.dropout(self.attention(self.ln1(x), mask), self._dropout, train, rng)
        ff = self.ff2(tn.relu(self.ff1(self.ln2(x))))
        return x + tn.dropout(ff, self._dropout, train, rng)


class Generator(Module):
    def __init__(self, vocab_size, hidden, n_features, rng, layers=2, heads=4, dropout=0.1):
        if layers < 1:
            raise ValueError("need at least one transformer layer")
        self.tok_emb = normal(rng, (vocab_size, hidden), 1.0 / np.sqrt(hidden))
        self.adapter = Linear(n_features, hidden, rng)
        self.segment = normal(rng, (2, hidden), 0.02)
        self.layers = [Block(hidden, heads, rng, dropout) for _ in range(layers)]
        self.ln_f = LayerNorm(hidden)
        self.W_p = normal(rng, (hidden, vocab_size), 1.0 / np.sqrt(hidden))
        self._vocab = vocab_size

    @property
    def vocab_size(self):
        return self._vocab

    def memory(self, x, h, visual_keep=None):
        """Prefix memory rows: adapter(x) then h_1..h_T, each with a segment offset.

        ``visual_keep`` (B,) of 0/1 zeroes the adapted visual feature of some
        examples (the segment offset stays).
        """
        B = x.shape[0]
        vis = self.adapter(x)
        if visual_keep is not None:
            vis = vis * np.asarray(visual_keep, dtype=np.float64)[:, None]
        vis = (vis + self.segment[0]).reshape(B, 1, -1)
        ind = h + self.segment[1]
        return tn.concat([vis, ind], axis=1)

    def forward(self, memory, tokens, rng=None):
        """``tokens`` (B, n) int ids → hidden states (B, n, e) for the token positions."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim == 1:
            tokens = tokens[None]
        if tokens.size and (tokens.max() >= self._vocab or tokens.min() < 0):
            raise ContractError(f"token id out of range for vocabulary of size {self._vocab}")
        B, n = tokens.shape
        Tm = memory.shape[1]
        pos = Tensor(sinusoid(n, memory.shape[2]))
        emb = tn.embedding(self.tok_emb, tokens) + pos
        x = tn.concat([memory, emb], axis=1)
        mask = prefix_mask(Tm, n)
        for layer in self.layers:
            x = layer(x, mask, rng)
        return self.ln_f(x[:, Tm:])

    def start(self, memory):
        """Decoding cache for ``memory``: per-layer keys/values of the memory rows.

        Memory rows never attend to tokens, so their keys and values are fixed
        for the whole decode.
        """
        with tn.no_grad():
            x = memory
            caches = []
            for layer in self.layers:
                x, kv = layer.prime(x)
                caches.append(kv)
        return {"caches": caches, "n": 0}

    def step(self, state, tokens):
        """Feed one token per sequence; returns the final hidden state (B, e)."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.max() >= self._vocab or tokens.min() < 0:
            raise ContractError(f"token id out of range for vocabulary of size {self._vocab}")
        e = self.tok_emb.shape[1]
        with tn.no_grad():
            pos = sinusoid(state["n"] + 1, e)[-1]
            x = (tn.embedding(self.tok_emb, tokens[:, None]) + Tensor(pos))
            for layer, cache in zip(self.layers, state["caches"]):
                x = layer.step(x, cache)
            state["n"] += 1
            return self.ln_f(x).data[:, 0]

    def logits(self, hidden):
        return tn.matmul(hidden, self.W_p)

    def token_distribution(self, hidden):
        """p_n = softmax(W_pᵀ h'_n)."""
        return tn.softmax(self.logits(hidden), axis=-1)


def token_distribution(hidden, W_p):
    return tn.softmax(tn.matmul(hidden, W_p), axis=-1)


def generator_loss(log_probs, targets, mask=None):
    """−(1/l) Σ_i Σ_n log p_i,n(target), l = number of reports, padding excluded.

    ``log_probs`` is (l, n, v); the log argument is clamped at 1e-12.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if log_probs.shape[:2] != targets.shape:
        raise ContractError(f"predictions {log_probs.shape[:2]} and references {targets.shape} are misaligned")
    l, n, v = log_probs.shape
    mask = np.ones(targets.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != targets.shape:
        raise ContractError("mask shape does not match references")
    picked = log_probs.reshape(l * n, v)[np.arange(l * n), targets.ravel()]
    picked = tn.maximum(picked, float(np.log(LOG_CLAMP)))
    return -(picked * mask.ravel().astype(np.float64)).sum() * (1.0 / l)
