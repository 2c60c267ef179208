"""Report generation: predicted (or overridden) states → expansion → autoregressive decoding."""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .classifier import check_override
from .errors import ContractError
from .tokenizer import BOS, EOS


@dataclass
class GenerationResult:
    token_ids: list
    text: str
    step_probs: list
    alpha: np.ndarray
    states: np.ndarray
    overrides: dict = field(default_factory=dict)
    log_prob: float = 0.0


def resolve_overrides(templates, overrides):
    """Normalise {indicator: state} (names, indices or rows) to {index: one-hot/prob row}."""
    out = {}
    for key, value in (overrides or {}).items():
        t = key if isinstance(key, (int, np.integer)) else templates.indicator_index(key)
        if not 0 <= t < templates.n_indicators:
            raise ContractError(f"override for unknown indicator {key!r}")
        if isinstance(value, (str, int, np.integer)):
            row = np.zeros(templates.n_states)
            row[value if not isinstance(value, str) else templates.state_index(value)] = 1.0
        else:
            row = check_override(value, templates.n_states)
        out[int(t)] = row
    return out


def parse_assignment(text):
    """``"pleural_effusion=positive"`` → ("pleural_effusion", "positive")."""
    if "=" not in text:
        raise ContractError(f"override {text!r} must look like indicator=state")
    name, state = text.split("=", 1)
    return name.strip(), state.strip()


def predict_states(model, record):
    """Attention over states for each indicator and its argmax."""
    was = model.training
    model.eval()
    try:
        with tn.no_grad():
            alpha = model.classify([record]).alpha.data[0]
    finally:
        model.train(was)
    return alpha, alpha.argmax(axis=-1)


def _step_fn(model, memory):
    def fn(prefixes):
        prefixes = np.asarray(prefixes, dtype=np.int64)
        mem = memory if memory.shape[0] == prefixes.shape[0] else tn.Tensor(
            np.repeat(memory.data, prefixes.shape[0], axis=0))
        return model.next_log_probs(mem, prefixes)
    return fn


def _cached_step_fn(model, memory):
    """Step function over the last token only, backed by the generator's key/value cache."""
    state = model.generator.start(memory)

    def fn(prefixes):
        hidden = model.generator.step(state, np.asarray(prefixes)[:, -1])
        return tn.log_softmax(tn.Tensor(hidden @ model.generator.W_p.data), axis=-1).data
    return fn


def greedy_search(next_log_probs, n, max_len, bos=BOS, eos=EOS):
    """Argmax decoding of ``n`` sequences in lockstep; ties go to the lower token id.

    ``next_log_probs`` receives the full (n, length) prefix array each step.
    """
    prefixes = np.full((n, 1), bos, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    tokens = [[] for _ in range(n)]
    probs = [[] for _ in range(n)]
    scores = np.zeros(n)
    for _ in range(max_len):
        lp = next_log_probs(prefixes)
        choice = lp.argmax(axis=-1)
        for i in np.flatnonzero(~done):
            tokens[i].append(int(choice[i]))
            probs[i].append(np.exp(lp[i]))
            scores[i] += lp[i, choice[i]]
            if choice[i] == eos:
                done[i] = True
        if done.all():
            break
        prefixes = np.concatenate([prefixes, choice[:, None]], axis=1)
    return tokens, probs, scores


def beam_search(next_log_probs, beam, max_len, bos=BOS, eos=EOS, length_norm=False):
    """Keep the ``beam`` best prefixes by total log-probability.

    Each step ranks every one-token extension of the live prefixes by
    (score desc, tokens asc); the top ``beam`` survive, those ending in
    ``eos`` retire.  Returns (tokens, step_probs, score) of the best
    hypothesis among retired and, at ``max_len``, live ones.
    """
    if beam < 1 or max_len < 1:
        raise ContractError("beam width and max_len must be positive")
    live = [((), 0.0, ())]
    finished = []
    for _ in range(max_len):
        prefixes = np.array([[bos, *toks] for toks, _, _ in live], dtype=np.int64)
        lp = next_log_probs(prefixes)
        cands = []
        for i, (toks, score, probs) in enumerate(live):
            row = lp[i]
            for tok in range(row.shape[0]):
                cands.append((score + row[tok], toks + (tok,), i))
        cands.sort(key=lambda c: (-c[0], c[1]))
        live_next = []
        for score, toks, i in cands[:beam]:
            probs = live[i][2] + (np.exp(lp[i]),)
            if toks[-1] == eos:
                finished.append((toks, score, probs))
            else:
                live_next.append((toks, score, probs))
        live = live_next
        if not live:
            break
        if finished and not length_norm and max(f[1] for f in finished) > live[0][1]:
            break
    pool = finished + live

    def key(h):
        s = h[1] / len(h[0]) if length_norm else h[1]
        return (-s, h[0])

    toks, score, probs = min(pool, key=key)
    return list(toks), list(probs), score


def generate_batch(model, records, overrides=None, max_len=128, hard=False, cache=True):
    """Greedy decoding for many records at once; ``overrides`` is a list aligned with ``records``."""
    if max_len < 1:
        raise ContractError("max_len must be at least 1")
    overrides = overrides or [None] * len(records)
    resolved = [resolve_overrides(model.templates, o) for o in overrides]
    was = model.training
    model.eval()
    try:
        with tn.no_grad():
            memory, alpha, weights = model.condition(records, overrides=resolved, hard=hard)
            step = _cached_step_fn(model, memory) if cache else _step_fn(model, memory)
            tokens, probs, scores = greedy_search(step, len(records), max_len)
    finally:
        model.train(was)
    results = []
    for i in range(len(records)):
        results.append(GenerationResult(
            token_ids=tokens[i], text=model.vocab.decode(t for t in tokens[i] if t != EOS),
            step_probs=probs[i], alpha=alpha[i], states=weights[i].argmax(axis=-1),
            overrides=resolved[i], log_prob=float(scores[i])))
    return results


def generate(model, record, overrides=None, mode="greedy", beam=4, max_len=128, hard=False,
             length_norm=False):
    """Generate one report; ``mode`` is "greedy" or "beam"."""
    if mode == "greedy":
        return generate_batch(model, [record], [overrides], max_len, hard)[0]
    if mode != "beam":
        raise ContractError(f"unknown decoding mode {mode!r}")
    resolved = resolve_overrides(model.templates, overrides)
    was = model.training
    model.eval()
    try:
        with tn.no_grad():
            memory, alpha, weights = model.condition([record], overrides=resolved, hard=hard)
            toks, probs, score = beam_search(_step_fn(model, memory), beam, max_len, length_norm=length_norm)
    finally:
        model.train(was)
    return GenerationResult(token_ids=toks, text=model.vocab.decode(t for t in toks if t != EOS),
                            step_probs=probs, alpha=alpha[0], states=weights[0].argmax(axis=-1),
                            overrides=resolved, log_prob=float(score))
