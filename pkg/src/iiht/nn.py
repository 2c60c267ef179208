"""Minimal module system: parameter registration, canonical paths, layers."""

import numpy as np

from . import tensor as tn
from .tensor import Tensor


def param(data):
    return Tensor(data, requires_grad=True)


def normal(rng, shape, std):
    return param(rng.normal(0.0, std, size=shape))


class Module:
    """Container whose Tensor/Module attributes are discovered in definition order."""

    training = True

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            path = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in own.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def train(self, mode=True):
        self._set_mode(mode)
        return self

    def eval(self):
        return self.train(False)

    def _set_mode(self, mode):
        self.training = mode
        for value in vars(self).values():
            if isinstance(value, Module):
                value._set_mode(mode)
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        item._set_mode(mode)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True, std=None):
        self.weight = normal(rng, (n_in, n_out), std if std is not None else 1.0 / np.sqrt(n_in))
        self.bias = param(np.zeros(n_out)) if bias else None

    def forward(self, x):
        y = tn.matmul(x, self.weight) if x.ndim >= 2 else tn.matmul(x.reshape(1, -1), self.weight).reshape(-1)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, n, eps=1e-5):
        self.gamma = param(np.ones(n))
        self.beta = param(np.zeros(n))
        self._eps = eps

    def forward(self, x):
        return tn.layer_norm(x, self.gamma, self.beta, self._eps)


class GRUCell(Module):
    """Gated recurrent unit with reset gate applied to the hidden projection."""

    def __init__(self, n_in, n_hidden, rng):
        std = 1.0 / np.sqrt(n_hidden)
        self.w_input = param(rng.uniform(-std, std, size=(n_in, 3 * n_hidden)))
        self.w_hidden = param(rng.uniform(-std, std, size=(n_hidden, 3 * n_hidden)))
        self.b_input = param(np.zeros(3 * n_hidden))
        self.b_hidden = param(np.zeros(3 * n_hidden))
        self._n = n_hidden

    def forward(self, x, h):
        n = self._n
        gi = tn.matmul(x, self.w_input) + self.b_input
        gh = tn.matmul(h, self.w_hidden) + self.b_hidden
        r = tn.sigmoid(gi[:, :n] + gh[:, :n])
        z = tn.sigmoid(gi[:, n:2 * n] + gh[:, n:2 * n])
        cand = tn.tanh(gi[:, 2 * n:] + r * gh[:, 2 * n:])
        return (1.0 - z) * cand + z * h
