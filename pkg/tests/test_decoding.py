import itertools

import numpy as np
import pytest

from iiht import tensor as tn
from iiht.decoding import (beam_search, generate, generate_batch, greedy_search, parse_assignment,
                           predict_states, resolve_overrides)
from iiht.errors import ContractError
from iiht.generator import Generator
from iiht.tensor import Tensor
from iiht.tokenizer import BOS, EOS


def generator_step_fn(v, seed, e=8):
    rng = np.random.default_rng(seed)
    gen = Generator(v, e, 3, rng, layers=2, heads=2, dropout=0.0)
    gen.eval()
    for p in gen.parameters():
        p.data[...] = rng.normal(scale=0.8, size=p.data.shape)
    memory = rng.normal(size=(1, 2, e))

    def fn(prefixes):
        prefixes = np.asarray(prefixes)
        mem = Tensor(np.repeat(memory, prefixes.shape[0], axis=0))
        with tn.no_grad():
            return tn.log_softmax(gen.logits(gen(mem, prefixes)[:, -1]), axis=-1).data
    return fn


def exhaustive_best(fn, v, max_len):
    """Score every sequence that ends in eos (or reaches max_len) and return the best."""
    best = None
    for n in range(1, max_len + 1):
        for seq in itertools.product(range(v), repeat=n):
            if EOS in seq[:-1] or (n < max_len and seq[-1] != EOS):
                continue
            score = 0.0
            for i in range(n):
                score += fn(np.array([[BOS, *seq[:i]]]))[0][seq[i]]
            key = (-score, seq)
            if best is None or key < best:
                best = key
    return list(best[1]), -best[0]


@pytest.mark.parametrize("v,max_len,seed", [(3, 2, 0), (4, 3, 1), (5, 3, 2), (5, 4, 3), (4, 4, 4)])
def test_full_beam_equals_exhaustive(v, max_len, seed):
    fn = generator_step_fn(v, seed)
    toks, _, score = beam_search(fn, v ** max_len, max_len)
    ex_toks, ex_score = exhaustive_best(fn, v, max_len)
    assert toks == ex_toks
    assert score == pytest.approx(ex_score, abs=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_beam_one_equals_greedy(seed):
    fn = generator_step_fn(6, seed)
    g_toks, g_probs, g_score = greedy_search(fn, 1, 7)
    b_toks, b_probs, b_score = beam_search(fn, 1, 7)
    assert b_toks == g_toks[0]
    assert b_score == pytest.approx(g_score[0], abs=1e-12)
    assert all(np.allclose(p, q) for p, q in zip(b_probs, g_probs[0]))


def test_wider_beam_never_worse():
    fn = generator_step_fn(6, 9)
    scores = [beam_search(fn, b, 5)[2] for b in (1, 2, 4, 8)]
    assert all(b >= a - 1e-12 for a, b in zip(scores, scores[1:]))


def test_step_probs_are_distributions():
    fn = generator_step_fn(5, 1)
    _, probs, _ = greedy_search(fn, 1, 4)
    for p in probs[0]:
        assert abs(p.sum() - 1) <= 1e-9


def test_beam_arguments():
    fn = generator_step_fn(3, 0)
    with pytest.raises(ContractError):
        beam_search(fn, 0, 3)
    with pytest.raises(ContractError):
        beam_search(fn, 2, 0)


class TestModelDecoding:
    def test_greedy_beam_one_and_cache_agree(self, tiny):
        model, recs = tiny
        cached = generate_batch(model, recs, max_len=12)
        full = generate_batch(model, recs, max_len=12, cache=False)
        for a, b, rec in zip(cached, full, recs):
            assert a.token_ids == b.token_ids
            assert a.log_prob == pytest.approx(b.log_prob, abs=1e-10)
            beam = generate(model, rec, mode="beam", beam=1, max_len=12)
            assert beam.token_ids == a.token_ids

    def test_result_fields(self, tiny):
        model, recs = tiny
        res = generate(model, recs[0], max_len=5)
        assert len(res.token_ids) <= 5
        assert res.alpha.shape == (2, 3)
        assert abs(res.alpha.sum(-1) - 1).max() <= 1e-9
        assert res.text == model.vocab.decode([t for t in res.token_ids if t != EOS])

    def test_override_changes_states(self, tiny):
        model, recs = tiny
        alpha, states = predict_states(model, recs[0])
        new = (states[1] + 1) % 3
        res = generate(model, recs[0], overrides={"i1": int(new)}, max_len=4)
        assert res.states[1] == new
        assert res.states[0] == states[0]

    def test_predict_states_pure_and_normalised(self, tiny):
        model, recs = tiny
        a1, s1 = predict_states(model, recs[1])
        a2, s2 = predict_states(model, recs[1])
        assert np.array_equal(a1, a2) and np.array_equal(s1, s2)
        assert np.abs(a1.sum(-1) - 1).max() <= 1e-9

    def test_hard_states(self, tiny):
        model, recs = tiny
        soft_mem = model.condition(recs[:1])[0].data
        hard_mem = model.condition(recs[:1], hard=True)[0].data
        assert soft_mem.shape == hard_mem.shape

    def test_bad_mode_and_length(self, tiny):
        model, recs = tiny
        with pytest.raises(ContractError):
            generate(model, recs[0], mode="sample")
        with pytest.raises(ContractError):
            generate(model, recs[0], max_len=0)


def test_resolve_overrides(tiny):
    model, _ = tiny
    tpl = model.templates
    out = resolve_overrides(tpl, {"i0": "positive", 1: [0.2, 0.3, 0.5]})
    np.testing.assert_array_equal(out[0], [0, 0, 1])
    np.testing.assert_array_equal(out[1], [0.2, 0.3, 0.5])
    with pytest.raises(ContractError):
        resolve_overrides(tpl, {"spleen": "positive"})
    with pytest.raises(ContractError):
        resolve_overrides(tpl, {"i0": "maybe"})


def test_parse_assignment():
    assert parse_assignment("pleural_effusion = positive") == ("pleural_effusion", "positive")
    with pytest.raises(ContractError):
        parse_assignment("pneumonia")
