"""Central finite-difference checks for every differentiable op and the training losses."""

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .classifier import multilabel_loss, state_attention
from .generator import Block, generator_loss, prefix_mask
from .nn import GRUCell
from .tensor import Tensor

STEP = 1e-5
TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    instances: int
    max_error: float

    @property
    def passed(self):
        return self.max_error < TOLERANCE


def relative_error(analytic, numeric):
    return np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric)))


def check_function(fn, arrays, h=STEP):
    """Largest relative error between autodiff and central differences of ``fn``.

    ``fn`` maps Tensors built from ``arrays`` to a scalar Tensor.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    inputs = [Tensor(a, requires_grad=True) for a in arrays]
    tn.backward(fn(*inputs))
    worst = 0.0
    for k, a in enumerate(arrays):
        analytic = inputs[k].grad if inputs[k].grad is not None else np.zeros_like(a)
        numeric = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            orig = a[idx]
            a[idx] = orig + h
            up = fn(*[Tensor(x) for x in arrays]).item()
            a[idx] = orig - h
            down = fn(*[Tensor(x) for x in arrays]).item()
            a[idx] = orig
            numeric[idx] = (up - down) / (2 * h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def check_parameters(loss_fn, named_params, rng, per_tensor=6, h=STEP):
    """Finite-difference check of ``loss_fn()`` against a sample of entries of each parameter."""
    params = list(named_params)
    for _, p in params:
        p.grad = None
    tn.backward(loss_fn())
    worst = 0.0
    for _, p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = rng.choice(p.data.size, size=min(per_tensor, p.data.size), replace=False)
        for f in flat:
            idx = np.unravel_index(f, p.data.shape)
            orig = p.data[idx]
            p.data[idx] = orig + h
            with tn.no_grad():
                up = loss_fn().item()
            p.data[idx] = orig - h
            with tn.no_grad():
                down = loss_fn().item()
            p.data[idx] = orig
            num = (up - down) / (2 * h)
            worst = max(worst, abs(analytic[idx] - num) / max(1.0, abs(num)))
    return worst


def _away_from(rng, shape, lo=0.2, hi=2.0):
    """Random values with magnitude in [lo, hi] and random sign (avoids kinks at zero)."""
    return rng.uniform(lo, hi, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _distinct(rng, shape):
    """Random values with well separated entries, so max/argmax are stable under ±h."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.37 + rng.uniform(0, 0.05, n)).reshape(shape) - 0.3 * n


def op_cases(rng, instances=4):
    """(name, fn, input arrays) for every elementwise/shape/reduction op."""
    cases = []
    for _ in range(instances):
        cases += _op_instance(rng)
    return cases


def _op_instance(rng):
    weights = {}

    def w(t):
        # fixed random projection per shape, so repeated calls see the same function
        if t.shape not in weights:
            weights[t.shape] = rng.normal(size=t.shape)
        return (t * Tensor(weights[t.shape])).sum()

    cases = []
    n = int(rng.integers(2, 5))
    a, b = rng.normal(size=n), rng.normal(size=n)
    g = rng.normal(size=(n,))
    G = lambda t, g=g: (t * Tensor(g)).sum()  # noqa: E731
    cases += [
        ("add", lambda x, y, G=G: G(x + y), [a, b]),
        ("sub", lambda x, y, G=G: G(x - y), [a, b]),
        ("mul", lambda x, y, G=G: G(x * y), [a, b]),
        ("div", lambda x, y, G=G: G(x / y), [a, _away_from(rng, n)]),
        ("broadcast", lambda x, y, c=rng.normal(size=(3, n)): (tn.broadcast_to(x, (3, n)) * Tensor(c) + y).sum(),
         [a, b]),
        ("broadcast_add", lambda x, y, c=rng.normal(size=(3, n)): ((x.reshape(1, n) + y.reshape(3, 1)) * Tensor(c)).sum(),
         [a, rng.normal(size=3)]),
        ("relu", lambda x, G=G: G(tn.relu(x)), [_away_from(rng, n)]),
        ("tanh", lambda x, G=G: G(tn.tanh(x)), [a]),
        ("sigmoid", lambda x, G=G: G(tn.sigmoid(x)), [a]),
        ("exp", lambda x, G=G: G(tn.exp(x)), [a]),
        ("log", lambda x, G=G: G(tn.log(x)), [rng.uniform(0.3, 3.0, n)]),
        ("sum", lambda x: tn.tsum(x) * tn.tsum(x), [a]),
        ("mean", lambda x: tn.mean(x) * tn.mean(x * x), [a]),
        ("softmax", lambda x, G=G: G(tn.softmax(x)), [a]),
        ("log_softmax", lambda x, G=G: G(tn.log_softmax(x)), [a]),
        ("layer_norm", lambda x, gm, bt, G=G: G(tn.layer_norm(x, gm, bt)), [a, rng.normal(size=n), rng.normal(size=n)]),
        ("dropout", lambda x, G=G: G(tn.dropout(x, 0.3, True, np.random.default_rng(7))), [a]),
        ("masked_fill", lambda x, G=G, m=rng.random(n) < 0.5: G(tn.masked_fill(x, m, 0.5)), [a]),
        ("clamp_min", lambda x, G=G: G(tn.maximum(x, 0.0)), [_away_from(rng, n)]),
        ("concat", lambda x, y, c=rng.normal(size=2 * n): (tn.concat([x, y]) * Tensor(c)).sum(), [a, b]),
        ("slice", lambda x: (x[1:] * x[:-1]).sum(), [a]),
        ("fancy_index", lambda x, idx=rng.integers(0, n, size=5): w(x[idx]), [a]),
        ("embedding", lambda t, idx=rng.integers(0, n, size=(2, 3)): w(tn.embedding(t, idx)),
         [rng.normal(size=(n, 2))]),
        ("max_reduce", lambda x: w(tn.max_reduce(x, axis=0)), [_distinct(rng, (3, n))]),
    ]
    m, k, p = (int(v) for v in rng.integers(2, 4, size=3))
    cases += [
        ("matmul", lambda x, y: w(x @ y), [rng.normal(size=(m, k)), rng.normal(size=(k, p))]),
        ("batched_matmul", lambda x, y: w(tn.matmul(x, y)), [rng.normal(size=(2, m, k)), rng.normal(size=(k, p))]),
        ("reshape_transpose", lambda x: w(x.reshape(k, m).T), [rng.normal(size=(m, k))]),
        ("stack", lambda x, y: w(tn.stack([x, y], axis=1)), [rng.normal(size=(m,)), rng.normal(size=(m,))]),
        ("conv2d", lambda x, y: w(tn.conv2d(x, y, pad=1)),
         [rng.normal(size=(1, 2, 3, 4)), rng.normal(size=(2, 2, 3, 3))]),
        ("max_pool2d", lambda x: w(tn.max_pool2d(x)), [_distinct(rng, (1, 2, 4, 4))]),
    ]
    return cases


def composite_cases(rng):
    """Layer-level and loss-level checks built from several ops."""
    cases = []
    for _ in range(2):
        T, M, e = 3, 3, 4
        labels = np.eye(M)[rng.integers(0, M, size=(2, T))]
        cases.append(("multilabel_loss", lambda D, S, lab=labels: multilabel_loss(state_attention(D, S)[0], lab),
                      [rng.normal(size=(2, T, e)), rng.normal(size=(e, M))]))
        v, n = 5, 3
        tgt = rng.integers(0, v, size=(2, n))
        mask = np.array([[1, 1, 1], [1, 1, 0]], dtype=bool)
        cases.append(("generator_loss", lambda z, t=tgt, mk=mask: generator_loss(tn.log_softmax(z), t, mk),
                      [rng.normal(size=(2, n, v))]))
        cell = GRUCell(3, 4, rng)
        cases.append(("gru_cell", lambda x, h, c=cell, g=rng.normal(size=(2, 4)): (c(x, h) * Tensor(g)).sum(),
                      [rng.normal(size=(2, 3)), rng.normal(size=(2, 4))]))
        block = Block(4, 2, rng, dropout=0.0)
        mk = prefix_mask(2, 2)
        wt = rng.normal(size=(1, 4, 4))
        cases.append(("attention_block", lambda x, b=block, m=mk, wt=wt: (b(x, m) * Tensor(wt)).sum(),
                      [rng.normal(size=(1, 4, 4))]))
    return cases


def tiny_model(seed=0):
    """A fully featured model small enough for exhaustive gradient checks (e=8, v≤12)."""
    from .corpus import ReportRecord
    from .model import IIHTModel, ModelConfig
    from .templates import IndicatorTemplates
    from .tokenizer import train_bpe

    sents = {(0, 0): "ab.", (0, 1): "ba.", (0, 2): "aa.", (1, 0): "cb.", (1, 1): "bc.", (1, 2): "cc."}
    phrases = {(t, m): [f"i{t}", ("uncertain", "negative", "positive")[m]] for t in range(2) for m in range(3)}
    templates = IndicatorTemplates(["i0", "i1"], ["uncertain", "negative", "positive"], phrases, sents)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(3):
        states = rng.integers(0, 3, size=2)
        records.append(ReportRecord(id=f"g{i}", labels=np.eye(3, dtype=int)[states],
                                    report=templates.render(states), features=rng.normal(size=6)))
    vocab = train_bpe([r.report for r in records], 12)
    cfg = ModelConfig(n_indicators=2, hidden=8, n_features=6, encoder="passthrough", image_shape=None,
                      layers=1, heads=2, dropout=0.0, visual_dropout=0.0, seed=seed)
    model = IIHTModel(cfg, templates, vocab)
    model.eval()
    return model, records


def tiny_conv_model(seed=0):
    from .corpus import CorpusSpec, generate
    from .model import IIHTModel, ModelConfig
    from .templates import IndicatorTemplates
    from .tokenizer import train_bpe

    spec = CorpusSpec(n_indicators=2, n_train=2, n_val=0, n_test=0, cell=4, seed=seed, n_views=2)
    records, _, _ = generate(spec)
    vocab = train_bpe([r.report for r in records], 40)
    cfg = ModelConfig(n_indicators=2, hidden=4, n_features=4, image_shape=spec.image_shape,
                      layers=1, heads=2, dropout=0.0, visual_dropout=0.0, seed=seed)
    model = IIHTModel(cfg, IndicatorTemplates.default(2), vocab)
    model.eval()
    return model, records


def kink_distance(loss_fn):
    """Smallest distance of any relu/clamp/max input to its kink during one forward."""
    with tn.no_grad(), tn.kink_monitor() as box:
        loss_fn()
    return box[0]


def smooth_instance(make, loss_fn, rng, margin=10 * STEP, tries=20):
    """Draw ``make(seed)`` until ``loss_fn(instance)`` keeps every kink input beyond ``margin``.

    Central differences straddling a relu/max kink measure the wrong slope,
    so such instances are redrawn rather than counted.
    """
    for _ in range(tries):
        inst = make(int(rng.integers(1 << 30)))
        if kink_distance(lambda: loss_fn(*inst)) > margin:
            return inst
    raise RuntimeError("could not draw an instance away from non-differentiable points")


def model_cases(rng):
    from .training import total_loss

    cases = []
    model, records = smooth_instance(tiny_model, lambda m, r: total_loss(*m.losses(r)[:2], 0.5), rng)
    params = list(model.named_parameters())

    def blended(lam):
        def fn():
            lg, lc, _ = model.losses(records)
            return total_loss(lg, lc, lam)
        return fn

    cases.append(("L_C (model)", lambda: model.losses(records, need_generator=False)[1], params))
    cases.append(("L_G (model)", lambda: model.losses(records)[0], params))
    cases.append(("L total, lambda=0.5", blended(0.5), params))
    conv_model, conv_records = smooth_instance(
        tiny_conv_model, lambda m, r: total_loss(*m.losses(r)[:2], 0.5), rng)
    cases.append(("L total, conv encoder", lambda: total_loss(*conv_model.losses(conv_records)[:2], 0.5),
                  [(k, p) for k, p in conv_model.named_parameters() if k.startswith("encoder")]))
    return cases


def run_suite(seed=0, log=None):
    """Run every check; returns a list of :class:`CheckResult` (one per check name)."""
    rng = np.random.default_rng(seed)
    results = {}

    def record(name, err):
        r = results.setdefault(name, CheckResult(name, 0, 0.0))
        r.instances += 1
        r.max_error = max(r.max_error, float(err))

    t0 = time.perf_counter()
    for name, fn, arrays in op_cases(rng) + composite_cases(rng):
        record(name, check_function(fn, arrays))
    for name, fn, params in model_cases(rng):
        record(name, check_parameters(fn, params, rng))
    out = list(results.values())
    if log:
        for r in out:
            log(f"{'PASS' if r.passed else 'FAIL'} {r.name:<24} n={r.instances:<3} max_rel_err={r.max_error:.2e}")
        log(f"{sum(r.instances for r in out)} instances in {time.perf_counter() - t0:.1f}s")
    return out
