"""Blended-loss optimisation with AdamW, checkpoint files and metric logs."""

import csv
import io
import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import tensor as tn
from .errors import ConfigError, ContractError, NonFiniteGradient, TrainingDiverged
from .model import IIHTModel

log = logging.getLogger(__name__)

MAGIC = b"IIHT"
FORMAT_VERSION = 1
LOG_FIELDS = ("epoch", "train_loss", "val_loss", "L_G", "L_C", "state_acc")


@dataclass
class TrainConfig:
    lam: float = 0.5
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 8
    epochs: int = 200
    seed: int = 0
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    swap_prob: float = 0.5
    max_swaps: int = 3

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if not 0.0 <= self.swap_prob <= 1.0:
            raise ConfigError(f"swap_prob must lie in [0, 1], got {self.swap_prob}")
        if self.lr <= 0 or self.weight_decay < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("learning rate and batch size must be positive, decay and epochs non-negative")

    def to_dict(self):
        return asdict(self)


PRESETS = {
    "toy": {},
    "paper": {"lam": 0.5, "lr": 1e-6, "weight_decay": 1e-4, "batch_size": 8, "epochs": 300},
}
PAPER_HIDDEN = 512


def preset(name, **overrides):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}")
    return replace(TrainConfig(**PRESETS[name]), **overrides)


def total_loss(loss_g, loss_c, lam):
    """λ·L_G + (1−λ)·L_C; the endpoints return one term unchanged."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    if lam == 0.0:
        return loss_c
    if lam == 1.0:
        return loss_g
    return loss_g * lam + loss_c * (1.0 - lam)


class AdamW:
    """Adam with decoupled weight decay; parameters without a gradient are skipped."""

    def __init__(self, named_params, config):
        self.params = dict(named_params)
        self.config = config
        self.m = {}
        self.v = {}
        self.t = {}

    def clip(self, grads):
        limit = self.config.clip_norm
        if not limit:
            return grads, None
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if norm > limit:
            scale = limit / (norm + 1e-6)
            grads = {k: g * scale for k, g in grads.items()}
        return grads, norm

    def step(self):
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(k)
        grads, norm = self.clip(grads)
        c = self.config
        for k, g in grads.items():
            p = self.params[k]
            t = self.t.get(k, 0) + 1
            m = c.beta1 * self.m.get(k, 0.0) + (1 - c.beta1) * g
            v = c.beta2 * self.v.get(k, 0.0) + (1 - c.beta2) * g * g
            m_hat = m / (1 - c.beta1 ** t)
            v_hat = v / (1 - c.beta2 ** t)
            w = p.data * (1.0 - c.lr * c.weight_decay)
            p.data = w - c.lr * m_hat / (np.sqrt(v_hat) + c.eps)
            self.m[k], self.v[k], self.t[k] = m, v, t
        return norm

    def state(self):
        return {"m": dict(self.m), "v": dict(self.v), "t": dict(self.t)}

    def load_state(self, state):
        self.m = {k: np.asarray(v) for k, v in state["m"].items()}
        self.v = {k: np.asarray(v) for k, v in state["v"].items()}
        self.t = {k: int(v) for k, v in state["t"].items()}


def adamw_step(params, grads, moments, config):
    """Functional single update: ``moments`` is a dict with m, v, t maps (mutated)."""
    opt = AdamW(params, config)
    opt.load_state(moments)
    for k, p in opt.params.items():
        p.grad = grads.get(k)
    opt.step()
    moments.update(opt.state())
    return {k: p.data for k, p in opt.params.items()}, moments


# -- checkpoint file ------------------------------------------------------


def _write_blob(fh, data):
    fh.write(struct.pack("<I", len(data)))
    fh.write(data)


def _read_blob(fh):
    (n,) = struct.unpack("<I", fh.read(4))
    data = fh.read(n)
    if len(data) != n:
        raise ValueError("truncated checkpoint")
    return data


def _write_tensor(fh, path, arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    _write_blob(fh, path.encode("utf-8"))
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def _read_tensor(fh):
    path = _read_blob(fh).decode("utf-8")
    (ndim,) = struct.unpack("<I", fh.read(4))
    shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    data = fh.read(8 * count)
    if len(data) != 8 * count:
        raise ValueError(f"truncated tensor record {path!r}")
    return path, np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)


def save_checkpoint(path, model, optimizer=None, train_config=None, step=0, epoch=0, shuffle_rng=None):
    meta = {
        "model": model.describe(),
        "train_config": train_config.to_dict() if train_config else None,
        "step": step,
        "epoch": epoch,
        "rng": {"dropout": model.rng.bit_generator.state,
                "shuffle": shuffle_rng.bit_generator.state if shuffle_rng is not None else None},
    }
    records = [(k, p.data) for k, p in model.named_parameters()]
    if optimizer is not None:
        st = optimizer.state()
        for k in sorted(st["t"]):
            records.append((f"optim.m/{k}", st["m"][k]))
            records.append((f"optim.v/{k}", st["v"][k]))
            records.append((f"optim.t/{k}", np.float64(st["t"][k])))
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    _write_blob(buf, json.dumps(meta, sort_keys=True).encode("utf-8"))
    buf.write(struct.pack("<I", len(records)))
    for k, arr in records:
        _write_tensor(buf, k, arr)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


@dataclass
class Checkpoint:
    model: IIHTModel
    meta: dict
    optimizer_state: dict
    train_config: TrainConfig = None

    @property
    def step(self):
        return self.meta.get("step", 0)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not an IIHT checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        meta = json.loads(_read_blob(fh).decode("utf-8"))
        (n,) = struct.unpack("<I", fh.read(4))
        tensors = dict(_read_tensor(fh) for _ in range(n))
    model = IIHTModel.from_description(meta["model"])
    model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("optim.")})
    model.rng.bit_generator.state = meta["rng"]["dropout"]
    opt = {"m": {}, "v": {}, "t": {}}
    for k, v in tensors.items():
        if k.startswith("optim."):
            kind, name = k[len("optim."):].split("/", 1)
            opt[kind][name] = int(v.reshape(-1)[0]) if kind == "t" else v
    cfg = TrainConfig(**meta["train_config"]) if meta.get("train_config") else None
    return Checkpoint(model=model, meta=meta, optimizer_state=opt, train_config=cfg)


# -- training loop ---------------------------------------------------------


def state_swaps(records, templates, rng, prob, max_swaps):
    """Conditioning for the generator with some indicator states replaced.

    With probability ``prob`` a record gets 1..``max_swaps`` indicators moved
    to a different state, and its target report re-rendered from the
    templates.  Records whose report is not the template rendering of their
    labels are never altered.
    """
    out = []
    M = templates.n_states
    for rec in records:
        u = rng.random()
        if u >= prob or rec.report != templates.render(rec.states):
            out.append(None)
            continue
        states = rec.states.copy()
        k = int(rng.integers(1, max_swaps + 1))
        for t in rng.choice(len(states), size=min(k, len(states)), replace=False):
            states[t] = (states[t] + int(rng.integers(1, M))) % M
        out.append((np.eye(M, dtype=np.int64)[states], templates.render(states)))
    return out


def batches(records, size, rng):
    order = rng.permutation(len(records))
    return [[records[i] for i in order[s:s + size]] for s in range(0, len(order), size)]


def evaluate_losses(model, records, lam, batch_size=32):
    """Mean (total, L_G, L_C, state accuracy) over ``records`` with dropout off."""
    if not records:
        return math.nan, math.nan, math.nan, math.nan
    was = model.training
    model.eval()
    tot = lg = lc = 0.0
    correct = count = 0
    try:
        with tn.no_grad():
            for s in range(0, len(records), batch_size):
                chunk = records[s:s + batch_size]
                loss_g, loss_c, st = model.losses(chunk, need_generator=lam > 0)
                g = loss_g.item() if loss_g is not None else math.nan
                c = loss_c.item()
                w = len(chunk)
                lg += g * w
                lc += c * w
                tot += (c if lam == 0 else g if lam == 1 else lam * g + (1 - lam) * c) * w
                correct += st["state_correct"]
                count += st["state_total"]
    finally:
        model.train(was)
    n = len(records)
    return tot / n, lg / n, lc / n, correct / count


def write_log(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{row[k]:.10g}" if isinstance(row[k], float) else row[k]) for k in LOG_FIELDS})


@dataclass
class TrainResult:
    model: IIHTModel
    optimizer: AdamW
    history: list
    steps: int


def train(config, train_records, val_records, model, log_path=None, checkpoint_path=None,
          on_epoch=None, max_steps=None):
    """Run the optimisation loop; returns a :class:`TrainResult`.

    ``on_epoch(epoch, row)`` may return True to stop early.  ``max_steps``
    caps the number of optimiser updates (used by short gating checks).
    """
    if not train_records:
        raise ContractError("training split is empty")
    rng = np.random.default_rng(config.seed)
    opt = AdamW(model.named_parameters(), config)
    history = []
    step = 0
    good = (model.state_dict(), opt.state())
    need_g = config.lam > 0
    model.train()
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        sums = {"loss": 0.0, "g": 0.0, "c": 0.0}
        n_seen = 0
        for batch in batches(train_records, config.batch_size, rng):
            cond = None
            if need_g and config.swap_prob > 0:
                cond = state_swaps(batch, model.templates, rng, config.swap_prob, config.max_swaps)
            loss_g, loss_c, _ = model.losses(batch, need_generator=need_g, conditioning=cond)
            loss = total_loss(loss_g, loss_c, config.lam)
            if not math.isfinite(loss.item()):
                model.load_state_dict(good[0])
                opt.load_state(good[1])
                if checkpoint_path:
                    save_checkpoint(checkpoint_path, model, opt, config, step, epoch - 1, rng)
                raise TrainingDiverged(epoch, step, checkpoint_path)
            model.zero_grad()
            tn.backward(loss)
            opt.step()
            step += 1
            w = len(batch)
            sums["loss"] += loss.item() * w
            sums["g"] += (loss_g.item() if loss_g is not None else math.nan) * w
            sums["c"] += loss_c.item() * w
            n_seen += w
            if max_steps is not None and step >= max_steps:
                break
        val_loss, _, _, acc = evaluate_losses(model, val_records or train_records, config.lam)
        row = {"epoch": epoch, "train_loss": sums["loss"] / n_seen, "val_loss": val_loss,
               "L_G": sums["g"] / n_seen, "L_C": sums["c"] / n_seen, "state_acc": acc}
        history.append(row)
        good = (model.state_dict(), opt.state())
        log.info("epoch %d loss %.4f L_G %.4f L_C %.4f acc %.4f (%.1fs)", epoch, row["train_loss"],
                 row["L_G"], row["L_C"], acc, time.perf_counter() - t0)
        stop = on_epoch(epoch, row) if on_epoch else False
        if stop or (max_steps is not None and step >= max_steps):
            break
    if log_path:
        write_log(history, log_path)
    if checkpoint_path:
        save_checkpoint(checkpoint_path, model, opt, config, step, len(history), rng)
    return TrainResult(model=model, optimizer=opt, history=history, steps=step)
