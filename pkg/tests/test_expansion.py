import numpy as np
import pytest

from iiht.errors import ContractError
from iiht.expansion import IndicatorExpansion, PhraseTable
from iiht.gradcheck import check_parameters
from iiht.templates import IndicatorTemplates
from iiht.tensor import Tensor


def sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def gru_oracle(cell, x, h):
    """One GRU step written out gate by gate."""
    n = h.shape[0]
    Wi, Wh = cell.w_input.data, cell.w_hidden.data
    bi, bh = cell.b_input.data, cell.b_hidden.data
    gi = x @ Wi + bi
    gh = h @ Wh + bh
    r = sig(gi[:n] + gh[:n])
    z = sig(gi[n:2 * n] + gh[n:2 * n])
    c = np.tanh(gi[2 * n:] + r * gh[2 * n:])
    return (1 - z) * c + z * h


def expansion_oracle(exp, words, s):
    emb = exp.word_emb.data
    hf = s.copy()
    for w in words:
        hf = gru_oracle(exp.gru_fwd, emb[w], hf)
    hb = s.copy()
    for w in reversed(words):
        hb = gru_oracle(exp.gru_bwd, emb[w], hb)
    hk = np.concatenate([hf, hb]) @ exp.combine.weight.data + exp.combine.bias.data
    u = np.tanh((s + hk) @ exp.mlp_in.weight.data + exp.mlp_in.bias.data)
    return u @ exp.mlp_out.weight.data + exp.mlp_out.bias.data


@pytest.fixture
def table():
    return PhraseTable(IndicatorTemplates.default())


class TestPhraseTable:
    def test_template_lookup(self, table):
        t = IndicatorTemplates.default().indicator_index("pneumonia")
        ids = table.indicator_to_words(t, [0, 0, 1])
        assert table.vocab.decode(ids) == ["pneumonia", "positive"]

    def test_argmax_equivalence(self, table):
        t = IndicatorTemplates.default().indicator_index("lung opacity")
        assert table.indicator_to_words(t, [0.1, 0.2, 0.7]) == table.indicator_to_words(t, [0, 0, 1])

    def test_all_pairs_round_trip(self, table):
        tpl = table.templates
        for t in range(tpl.n_indicators):
            for m in range(tpl.n_states):
                row = np.eye(tpl.n_states)[m]
                assert table.vocab.decode(table.indicator_to_words(t, row)) == tpl.phrase(t, m)

    def test_bad_rows(self, table):
        with pytest.raises(ContractError):
            table.indicator_to_words(0, [0.5, 0.6, 0.0])
        with pytest.raises(ContractError):
            table.indicator_to_words(99, [1, 0, 0])

    def test_batch_padding(self, table):
        ids, lengths = table.batch([(0, 0), (1, 2)])
        assert ids.shape == (2, lengths.max())
        assert (ids[1, lengths[1]:] == 0).all()


class TestExpansion:
    def test_zeroed_gru_closed_form(self, rng):
        e = 4
        exp = IndicatorExpansion(6, e, rng)
        for cell in (exp.gru_fwd, exp.gru_bwd):
            for p in cell.parameters():
                p.data[...] = 0.0
        for lin in (exp.mlp_in, exp.mlp_out):
            lin.weight.data[...] = np.eye(e)
            lin.bias.data[...] = 0.0
        exp.combine.weight.data[...] = np.vstack([np.eye(e), np.zeros((e, e))])
        exp.combine.bias.data[...] = 0.0
        s = rng.normal(size=e)
        words = [1, 4, 2]
        # all gates sit at 0.5 and the candidate at 0, so each step halves the state
        expected = np.tanh(s + s * 0.5 ** len(words))
        h = exp.encode_indicator(words, s).data
        np.testing.assert_allclose(h, expected, atol=1e-15, rtol=0)
        np.testing.assert_allclose(h, expansion_oracle(exp, words, s), atol=1e-15, rtol=0)

    def test_random_weights_match_step_oracle(self, rng):
        exp = IndicatorExpansion(7, 5, rng)
        for p in exp.parameters():
            p.data[...] = rng.normal(scale=0.5, size=p.data.shape)
        for words in ([3], [1, 2], [6, 0, 5, 4]):
            s = rng.normal(size=5)
            np.testing.assert_allclose(exp.encode_indicator(words, s).data, expansion_oracle(exp, words, s),
                                       atol=1e-12, rtol=0)

    def test_padded_batch_matches_single(self, rng):
        exp = IndicatorExpansion(7, 5, rng)
        phrases = [[1, 2, 3], [4], [5, 6]]
        s = rng.normal(size=(3, 5))
        ids = np.zeros((3, 3), dtype=np.int64)
        for i, p in enumerate(phrases):
            ids[i, :len(p)] = p
        out = exp(ids, np.array([3, 1, 2]), Tensor(s)).data
        for i, p in enumerate(phrases):
            np.testing.assert_allclose(out[i], exp.encode_indicator(p, s[i]).data, atol=1e-14, rtol=0)

    def test_word_order_matters(self, rng):
        exp = IndicatorExpansion(7, 5, rng)
        s = rng.normal(size=5)
        assert not np.allclose(exp.encode_indicator([1, 2], s).data, exp.encode_indicator([2, 1], s).data)

    def test_both_directions_used(self, rng):
        exp = IndicatorExpansion(7, 5, rng)
        s = rng.normal(size=5)
        base = exp.encode_indicator([1, 2, 3], s).data
        for cell in (exp.gru_fwd, exp.gru_bwd):
            saved = cell.w_input.data.copy()
            cell.w_input.data += 0.1
            assert not np.allclose(exp.encode_indicator([1, 2, 3], s).data, base)
            cell.w_input.data[...] = saved

    def test_purity(self, rng):
        exp = IndicatorExpansion(7, 5, rng)
        s = rng.normal(size=5)
        assert np.array_equal(exp.encode_indicator([1, 2], s).data, exp.encode_indicator([1, 2], s).data)

    def test_empty_phrase(self, rng):
        with pytest.raises(ContractError):
            IndicatorExpansion(7, 5, rng).encode_indicator([], np.zeros(5))

    def test_gradients(self, rng):
        exp = IndicatorExpansion(7, 4, rng)
        s = rng.normal(size=4)
        g = rng.normal(size=4)
        err = check_parameters(lambda: (exp.encode_indicator([1, 5, 2], s) * Tensor(g)).sum(),
                               exp.named_parameters(), rng, per_tensor=8)
        assert err < 1e-4


def test_templates_file_round_trip(tmp_path):
    tpl = IndicatorTemplates.default()
    tpl.save(tmp_path / "t.txt")
    back = IndicatorTemplates.load(tmp_path / "t.txt")
    assert back.names == tpl.names and back.states == tpl.states
    assert back.phrases == tpl.phrases and back.sentences == tpl.sentences


def test_templates_lookup_and_render():
    tpl = IndicatorTemplates.default()
    assert tpl.indicator_index("pleural_effusion") == tpl.indicator_index("pleural effusion")
    assert tpl.state_index("positive") == 2
    text = tpl.render([1] * 11)
    assert text.count(".") >= 11
    assert all(len({tpl.sentence(t, m) for m in range(3)}) == 3 for t in range(11))
    with pytest.raises(ContractError):
        tpl.indicator_index("spleen")
    with pytest.raises(ContractError):
        tpl.render([0, 1])
