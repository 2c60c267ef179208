"""Synthetic (images, indicator states, report) corpus and JSON-lines I/O."""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .templates import IndicatorTemplates

# pixel intensity of indicator cell t, indexed by state (uncertain, negative, positive)
STATE_INTENSITY = (0.5, 0.2, 0.8)


@dataclass
class ReportRecord:
    id: str
    labels: np.ndarray
    report: str
    images: list = None
    features: np.ndarray = None

    def __post_init__(self):
        raw = np.asarray(self.labels, dtype=np.float64)
        if not np.isin(raw, (0.0, 1.0)).all():
            raise ValidationError(f"record {self.id}: every label row must be one-hot", self.id)
        self.labels = raw.astype(np.int64)
        if self.features is not None:
            self.features = np.asarray(self.features, dtype=np.float64)
        if self.images is not None:
            self.images = [np.asarray(im, dtype=np.float64) for im in self.images]
        validate(self)

    @property
    def states(self):
        return self.labels.argmax(axis=1)

    def __eq__(self, other):
        if not isinstance(other, ReportRecord):
            return NotImplemented
        if (self.id, self.report) != (other.id, other.report):
            return False
        if not np.array_equal(self.labels, other.labels):
            return False
        if (self.features is None) != (other.features is None):
            return False
        if self.features is not None:
            return np.array_equal(self.features, other.features)
        return len(self.images) == len(other.images) and all(
            np.array_equal(a, b) for a, b in zip(self.images, other.images))


def validate(rec):
    rid = rec.id
    if (rec.images is None) == (rec.features is None):
        raise ValidationError(f"record {rid}: exactly one of images/features must be present", rid)
    if rec.images is not None:
        if not rec.images:
            raise ValidationError(f"record {rid}: empty image list", rid)
        if any(im.ndim != 2 for im in rec.images):
            raise ValidationError(f"record {rid}: images must be 2-D", rid)
        if len({im.shape for im in rec.images}) != 1:
            raise ValidationError(f"record {rid}: inconsistent image sizes", rid)
    elif rec.features.ndim != 1 or rec.features.size == 0:
        raise ValidationError(f"record {rid}: features must be a nonempty vector", rid)
    lab = rec.labels
    if lab.ndim != 2 or not np.isin(lab, (0, 1)).all() or not (lab.sum(axis=1) == 1).all():
        raise ValidationError(f"record {rid}: every label row must be one-hot", rid)
    if not rec.report:
        raise ValidationError(f"record {rid}: empty report", rid)


@dataclass
class CorpusSpec:
    n_indicators: int = 11
    n_states: int = 3
    seed: int = 0
    n_train: int = 256
    n_val: int = 32
    n_test: int = 64
    cell: int = 4
    n_views: int = 2
    noise: float = 0.05
    priors: list = field(default=None)

    def __post_init__(self):
        if self.n_states != len(STATE_INTENSITY):
            raise ValueError(f"the synthetic renderer supports {len(STATE_INTENSITY)} states")
        if min(self.n_train, self.n_val, self.n_test) < 0 or self.n_train == 0:
            raise ValueError("split sizes must be non-negative and n_train positive")
        if self.cell < 1 or self.n_views < 1 or self.noise < 0:
            raise ValueError("cell, n_views must be positive and noise non-negative")
        if self.priors is None:
            self.priors = [[0.25, 0.45, 0.30]] * self.n_indicators
        pri = np.asarray(self.priors, dtype=np.float64)
        if pri.shape != (self.n_indicators, self.n_states):
            raise ValueError(f"priors must have shape ({self.n_indicators}, {self.n_states})")
        if (pri < 0).any() or not np.allclose(pri.sum(axis=1), 1.0):
            raise ValueError("each prior row must be a probability vector")
        self.priors = pri.tolist()

    @property
    def grid(self):
        cols = math.ceil(math.sqrt(self.n_indicators))
        rows = math.ceil(self.n_indicators / cols)
        return rows, cols

    @property
    def image_shape(self):
        rows, cols = self.grid
        return rows * self.cell, cols * self.cell


def render_image(states, spec, rng=None):
    """Grid image whose cell t shows the intensity code of ``states[t]``."""
    rows, cols = spec.grid
    c = spec.cell
    img = np.zeros(spec.image_shape)
    for t, m in enumerate(states):
        r, k = divmod(t, cols)
        img[r * c:(r + 1) * c, k * c:(k + 1) * c] = STATE_INTENSITY[int(m)]
    if rng is not None and spec.noise > 0:
        img = np.clip(img + rng.normal(0.0, spec.noise, size=img.shape), 0.0, 1.0)
    return img


def _split(spec, templates, rng, n, prefix):
    pri = np.asarray(spec.priors)
    cum = np.cumsum(pri, axis=1)
    records = []
    eye = np.eye(spec.n_states, dtype=np.int64)
    for i in range(n):
        u = rng.random(spec.n_indicators)
        states = np.minimum((u[:, None] >= cum).sum(axis=1), spec.n_states - 1)
        images = [render_image(states, spec, rng) for _ in range(spec.n_views)]
        records.append(ReportRecord(
            id=f"{prefix}-{i:05d}", labels=eye[states], report=templates.render(states), images=images))
    return records


def generate(spec, templates=None):
    """Return (train, val, test) record lists, deterministic in ``spec.seed``."""
    templates = templates or IndicatorTemplates.default(spec.n_indicators)
    if templates.n_indicators != spec.n_indicators or templates.n_states != spec.n_states:
        raise ValueError("templates do not match the corpus spec")
    rng = np.random.default_rng(spec.seed)
    return (_split(spec, templates, rng, spec.n_train, "train"),
            _split(spec, templates, rng, spec.n_val, "val"),
            _split(spec, templates, rng, spec.n_test, "test"))


# -- JSON lines -----------------------------------------------------------


def record_to_json(rec):
    obj = {"id": rec.id}
    if rec.features is not None:
        obj["features"] = rec.features.tolist()
    else:
        obj["images"] = [{"h": im.shape[0], "w": im.shape[1], "pixels": im.ravel().tolist()}
                         for im in rec.images]
    obj["labels"] = rec.labels.tolist()
    obj["report"] = rec.report
    return json.dumps(obj, ensure_ascii=False)


def record_from_json(obj, line=None):
    rid = obj.get("id")
    try:
        images = None
        if "images" in obj:
            images = []
            for im in obj["images"]:
                px = np.asarray(im["pixels"], dtype=np.float64)
                if px.size != im["h"] * im["w"]:
                    raise ValidationError(f"record {rid}: pixel count does not match h*w", rid, line)
                images.append(px.reshape(im["h"], im["w"]))
        return ReportRecord(id=str(rid), labels=obj["labels"], report=obj.get("report", ""),
                            images=images, features=obj.get("features"))
    except ValidationError as exc:
        exc.line = line
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"line {line}: malformed record {rid!r}: {exc}", rid, line) from None


def save_jsonl(records, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(record_to_json(rec) + "\n")


def load_jsonl(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({exc.msg})", line=lineno) from None
            records.append(record_from_json(obj, lineno))
    return records


def five_fold(records, fold, k=5):
    """Split ``records`` into (train, held-out) for rotation ``fold`` of ``k``."""
    if not 0 <= fold < k:
        raise ValueError(f"fold must be in [0, {k})")
    held = [r for i, r in enumerate(records) if i % k == fold]
    rest = [r for i, r in enumerate(records) if i % k != fold]
    return rest, held
