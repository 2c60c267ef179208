"""Visual features, per-indicator embeddings, and state attention."""

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .errors import ContractError
from .nn import Linear, Module, normal, param
from .tensor import Tensor

LOG_CLAMP = 1e-12


class VisualEncoder(Module):
    """Two conv+pool stages and an affine map to ``n_features``; or passthrough.

    Several views of one study are encoded separately and merged with an
    elementwise max.
    """

    def __init__(self, mode, n_features, rng, image_shape=None, channels=(8, 16)):
        if mode not in ("tiny-conv", "passthrough"):
            raise ValueError(f"unknown encoder mode {mode!r}")
        self.mode = mode
        self.n_features = n_features
        if mode == "tiny-conv":
            h, w = image_shape
            c1, c2 = channels
            self.conv1_w = normal(rng, (c1, 1, 3, 3), np.sqrt(2.0 / 9))
            self.conv1_b = param(np.zeros(c1))
            self.conv2_w = normal(rng, (c2, c1, 3, 3), np.sqrt(2.0 / (9 * c1)))
            self.conv2_b = param(np.zeros(c2))
            flat = c2 * (h // 4) * (w // 4)
            if flat == 0:
                raise ValueError(f"image shape {image_shape} too small for two 2x2 pools")
            self.proj = Linear(flat, n_features, rng)
            self._image_shape = tuple(image_shape)

    def encode_images(self, images):
        """(N, H, W) stack → (N, F)."""
        x = Tensor(np.asarray(images, dtype=np.float64)[:, None])
        x = tn.max_pool2d(tn.relu(tn.conv2d(x, self.conv1_w, self.conv1_b, pad=1)))
        x = tn.max_pool2d(tn.relu(tn.conv2d(x, self.conv2_w, self.conv2_b, pad=1)))
        return self.proj(x.reshape(x.shape[0], -1))

    def forward(self, records):
        """Batch of records → (B, F)."""
        if self.mode == "passthrough":
            feats = []
            for rec in records:
                if rec.features is None:
                    raise ContractError(f"record {rec.id} has no stored features for passthrough mode")
                if rec.features.shape != (self.n_features,):
                    raise ContractError(f"record {rec.id}: expected {self.n_features} features")
                feats.append(rec.features)
            return Tensor(np.stack(feats))
        views = []
        for rec in records:
            if not rec.images:
                raise ContractError(f"record {rec.id}: at least one image is required")
            if rec.images[0].shape != self._image_shape:
                raise ContractError(f"record {rec.id}: image shape {rec.images[0].shape}, "
                                    f"expected {self._image_shape}")
            views.append(len(rec.images))
        enc = self.encode_images([im for rec in records for im in rec.images])
        if len(set(views)) == 1:
            r = views[0]
            return tn.max_reduce(enc.reshape(len(records), r, self.n_features), axis=1)
        rows, start = [], 0
        for r in views:
            rows.append(tn.max_reduce(enc[start:start + r], axis=0))
            start += r
        return tn.stack(rows)


@dataclass
class ClassifierOutput:
    x: Tensor        # (B, F) visual features
    D: Tensor        # (B, T, e) indicator embeddings
    alpha: Tensor    # (B, T, M) state attention
    d_hat: Tensor    # (B, T, e) state-aware disease embedding, diagnostic only


class Classifier(Module):
    def __init__(self, n_indicators, n_states, n_features, hidden, rng):
        self.W = normal(rng, (n_indicators, n_features, hidden), 1.0 / np.sqrt(n_features))
        self.b = param(np.zeros((n_indicators, hidden)))
        self.S = normal(rng, (hidden, n_states), 1.0 / np.sqrt(hidden))

    def forward(self, x):
        D = indicator_embeddings(x, self.W, self.b)
        alpha, d_hat = state_attention(D, self.S)
        return ClassifierOutput(x=x, D=D, alpha=alpha, d_hat=d_hat)


def indicator_embeddings(x, W, b):
    """d_t = W_tᵀ x + b_t for every indicator; x is (B, F), result (B, T, e)."""
    B, F = x.shape
    T, _, e = W.shape
    d = tn.matmul(x.reshape(B, 1, 1, F), W).reshape(B, T, e)
    return d + b


def state_attention(D, S):
    """Softmax over states of d_tᵀ s_m, and the attention-weighted state mixture."""
    alpha = tn.softmax(tn.matmul(D, S), axis=-1)
    d_hat = tn.matmul(alpha, S.T)
    return alpha, d_hat


def multilabel_loss(alpha, labels):
    """Mean over indicators (and batch) of −Σ_m c_tm log α_tm, log argument clamped."""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != alpha.shape:
        raise ContractError(f"labels shape {labels.shape} does not match alpha {alpha.shape}")
    logp = tn.log(tn.maximum(alpha, LOG_CLAMP))
    per_row = (logp * labels).sum(axis=-1)
    return -per_row.mean()


def check_override(row, n_states):
    row = np.asarray(row, dtype=np.float64)
    if row.shape != (n_states,) or (row < 0).any() or abs(row.sum() - 1.0) > 1e-9:
        raise ContractError(f"override row {row.tolist()} is not a probability vector over {n_states} states")
    return row


def state_weights(alpha, labels=None, phase="infer", overrides=None, hard=False):
    """Per-indicator state weights feeding the state-aware embedding.

    Training uses the labels, inference the attention (or its one-hot argmax
    when ``hard``).  ``overrides`` maps indicator index → state row and wins
    in either phase; for batches it may be a list of such maps.
    """
    a = alpha.data if isinstance(alpha, Tensor) else np.asarray(alpha, dtype=np.float64)
    if phase == "train":
        if labels is None:
            raise ContractError("training phase needs labels")
        w = np.asarray(labels, dtype=np.float64).copy()
    elif phase == "infer":
        w = a.copy()
        if hard:
            w = np.eye(a.shape[-1])[a.argmax(axis=-1)]
    else:
        raise ContractError(f"unknown phase {phase!r}")
    if overrides:
        batch = overrides if isinstance(overrides, (list, tuple)) else [overrides] * (w.shape[0] if w.ndim == 3 else 1)
        for i, ov in enumerate(batch):
            for t, row in (ov or {}).items():
                if not 0 <= t < w.shape[-2]:
                    raise ContractError(f"override for unknown indicator {t}")
                row = check_override(row, w.shape[-1])
                if w.ndim == 3:
                    w[i, t] = row
                else:
                    w[t] = row
    return w


def state_substitute(alpha, S, labels=None, phase="infer", overrides=None, hard=False):
    """ŝ_t = Σ_m w_tm s_m with w from :func:`state_weights`."""
    w = state_weights(alpha, labels, phase, overrides, hard)
    return tn.matmul(Tensor(w), S.T), w
