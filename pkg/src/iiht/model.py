"""The full pipeline: classifier → indicator expansion → generator."""

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as tn
from .classifier import Classifier, VisualEncoder, multilabel_loss, state_substitute
from .expansion import IndicatorExpansion, PhraseTable
from .generator import Generator, generator_loss
from .nn import Module
from .templates import IndicatorTemplates
from .tokenizer import BOS, EOS, PAD, SubwordVocab


@dataclass
class ModelConfig:
    n_indicators: int = 11
    n_states: int = 3
    hidden: int = 64
    n_features: int = 64
    encoder: str = "tiny-conv"
    image_shape: tuple = (12, 16)
    layers: int = 2
    heads: int = 4
    dropout: float = 0.1
    visual_dropout: float = 0.5
    seed: int = 0

    def to_dict(self):
        d = asdict(self)
        d["image_shape"] = list(self.image_shape) if self.image_shape else None
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("image_shape") is not None:
            d["image_shape"] = tuple(d["image_shape"])
        return cls(**d)


class IIHTModel(Module):
    def __init__(self, config, templates, vocab):
        self.config = config
        self.templates = templates
        self.vocab = vocab
        self.phrases = PhraseTable(templates)
        rng = np.random.default_rng(config.seed)
        self._rng = np.random.default_rng([config.seed, 1])
        self.encoder = VisualEncoder(config.encoder, config.n_features, rng, config.image_shape)
        self.classifier = Classifier(config.n_indicators, config.n_states, config.n_features, config.hidden, rng)
        self.expansion = IndicatorExpansion(len(self.phrases.vocab), config.hidden, rng)
        self.generator = Generator(vocab.size, config.hidden, config.n_features, rng,
                                   config.layers, config.heads, config.dropout)

    @property
    def rng(self):
        return self._rng

    # -- pieces ---------------------------------------------------------

    def classify(self, records):
        return self.classifier(self.encoder(records))

    def indicator_info(self, weights, s_hat):
        """h for every (record, indicator): (B, T, M) state weights and (B, T, e) seeds."""
        B, T, _ = weights.shape
        states = [(t, int(m)) for row in weights.argmax(axis=-1) for t, m in enumerate(row)]
        ids, lengths = self.phrases.batch(states)
        h = self.expansion(ids, lengths, s_hat.reshape(B * T, -1))
        return h.reshape(B, T, -1)

    def encode_reports(self, reports):
        """Teacher-forcing arrays: inputs [bos, y...], targets [y..., eos], padding mask."""
        seqs = [self.vocab.encode(r) for r in reports]
        n = max(len(s) for s in seqs) + 1
        inputs = np.full((len(seqs), n), PAD, dtype=np.int64)
        targets = np.full((len(seqs), n), PAD, dtype=np.int64)
        mask = np.zeros((len(seqs), n), dtype=bool)
        for i, s in enumerate(seqs):
            inputs[i, :len(s) + 1] = [BOS] + s
            targets[i, :len(s) + 1] = s + [EOS]
            mask[i, :len(s) + 1] = True
        return inputs, targets, mask

    # -- training forward -------------------------------------------------

    def losses(self, records, need_generator=True, conditioning=None):
        """Returns (L_G or None, L_C, stats) for a batch using the training path.

        ``conditioning`` optionally replaces, per record, the state labels fed
        to the expansion and the report the generator is trained on, as a
        list of (labels, report) pairs (``None`` entries keep the record's own).
        L_C always uses the record labels.
        """
        out = self.classify(records)
        labels = np.stack([r.labels for r in records]).astype(np.float64)
        loss_c = multilabel_loss(out.alpha, labels)
        pred = out.alpha.data.argmax(axis=-1)
        stats = {"state_correct": int((pred == labels.argmax(axis=-1)).sum()), "state_total": pred.size}
        if not need_generator:
            return None, loss_c, stats
        cond_labels = labels
        reports = [r.report for r in records]
        if conditioning is not None:
            cond_labels = labels.copy()
            for i, item in enumerate(conditioning):
                if item is not None:
                    cond_labels[i] = item[0]
                    reports[i] = item[1]
        s_hat, w = state_substitute(out.alpha, self.classifier.S, labels=cond_labels, phase="train")
        h = self.indicator_info(w, s_hat)
        keep = None
        if self.training and self.config.visual_dropout > 0:
            keep = self._rng.random(len(records)) >= self.config.visual_dropout
        memory = self.generator.memory(out.x, h, keep)
        inputs, targets, mask = self.encode_reports(reports)
        hidden = self.generator(memory, inputs, self._rng if self.training else None)
        logp = tn.log_softmax(self.generator.logits(hidden), axis=-1)
        loss_g = generator_loss(logp, targets, mask)
        hit = (logp.data.argmax(axis=-1) == targets) & mask
        stats.update(token_correct=int(hit.sum()), token_total=int(mask.sum()))
        return loss_g, loss_c, stats

    # -- inference --------------------------------------------------------

    def condition(self, records, overrides=None, hard=False):
        """Classifier pass plus memory rows for decoding. Returns (memory, alpha, weights)."""
        out = self.classify(records)
        s_hat, w = state_substitute(out.alpha, self.classifier.S, phase="infer",
                                    overrides=overrides, hard=hard)
        h = self.indicator_info(w, s_hat)
        return self.generator.memory(out.x, h), out.alpha.data, w

    def next_log_probs(self, memory, prefixes):
        """Log-distribution over the next token for each prefix (rows of ``memory`` match)."""
        hidden = self.generator(memory, prefixes)
        return tn.log_softmax(self.generator.logits(hidden[:, -1]), axis=-1).data

    def describe(self):
        return {
            "config": self.config.to_dict(),
            "templates": self.templates.dumps(),
            "vocab": self.vocab.to_dict(),
        }

    @classmethod
    def from_description(cls, desc):
        return cls(ModelConfig.from_dict(desc["config"]),
                   IndicatorTemplates.loads(desc["templates"]),
                   SubwordVocab.from_dict(desc["vocab"]))
