import csv
import math

import numpy as np
import pytest

from iiht import tensor as tn
from iiht.errors import ConfigError, NonFiniteGradient
from iiht.gradcheck import tiny_conv_model, tiny_model
from iiht.tensor import Tensor
from iiht.training import (AdamW, TrainConfig, adamw_step, load_checkpoint, preset, save_checkpoint,
                           state_swaps, total_loss, train)


class TestTotalLoss:
    def test_endpoints_return_one_term(self):
        g, c = Tensor(2.0), Tensor(4.0)
        assert total_loss(g, c, 1.0) is g
        assert total_loss(g, c, 0.0) is c

    def test_blend(self):
        assert total_loss(Tensor(2.0), Tensor(4.0), 0.5).item() == 3.0

    def test_range(self):
        with pytest.raises(ConfigError):
            total_loss(Tensor(1.0), Tensor(1.0), 1.5)


class TestAdamW:
    def _param(self, value):
        return Tensor(np.array([value]), requires_grad=True)

    def test_zero_grad_zero_decay_is_identity(self):
        w = self._param(0.7)
        new, _ = adamw_step({"w": w}, {"w": np.zeros(1)}, {"m": {}, "v": {}, "t": {}},
                            TrainConfig(lr=0.1, weight_decay=0.0))
        assert new["w"][0] == 0.7

    def test_first_step_moves_by_lr(self):
        w = self._param(1.0)
        new, moments = adamw_step({"w": w}, {"w": np.ones(1)}, {"m": {}, "v": {}, "t": {}},
                                  TrainConfig(lr=0.1, weight_decay=0.0))
        # m̂ = v̂ = 1 after bias correction
        assert new["w"][0] == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8), abs=1e-15)
        assert moments["t"]["w"] == 1

    def test_decay_only(self):
        w = self._param(2.0)
        new, _ = adamw_step({"w": w}, {"w": np.zeros(1)}, {"m": {}, "v": {}, "t": {}},
                            TrainConfig(lr=0.1, weight_decay=0.01))
        assert new["w"][0] == pytest.approx(2.0 - 0.1 * 0.01 * 2.0, abs=1e-15)

    def test_second_step_oracle(self):
        cfg = TrainConfig(lr=0.05, weight_decay=0.1, clip_norm=0.0)
        w = self._param(1.5)
        opt = AdamW({"w": w}, cfg)
        x, m, v = 1.5, 0.0, 0.0
        for t, g in enumerate((0.3, -0.8), start=1):
            w.grad = np.array([g])
            opt.step()
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            x = x * (1 - 0.05 * 0.1) - 0.05 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert w.data[0] == pytest.approx(x, abs=1e-15)

    def test_clipping_global_norm(self):
        a, b = self._param(0.0), self._param(0.0)
        opt = AdamW({"a": a, "b": b}, TrainConfig(clip_norm=1.0))
        clipped, norm = opt.clip({"a": np.array([3.0]), "b": np.array([4.0])})
        assert norm == 5.0
        assert math.hypot(clipped["a"][0], clipped["b"][0]) == pytest.approx(1.0, abs=1e-6)

    def test_skips_params_without_grad(self):
        a, b = self._param(1.0), self._param(1.0)
        a.grad = np.array([1.0])
        AdamW({"a": a, "b": b}, TrainConfig(weight_decay=0.5)).step()
        assert b.data[0] == 1.0 and a.data[0] != 1.0

    def test_non_finite_gradient(self):
        a = self._param(1.0)
        a.grad = np.array([np.nan])
        with pytest.raises(NonFiniteGradient, match="a"):
            AdamW({"a": a}, TrainConfig()).step()


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lam=-0.1)
    with pytest.raises(ConfigError):
        TrainConfig(lr=0.0)
    with pytest.raises(ConfigError):
        preset("huge")
    p = preset("paper")
    assert (p.lam, p.lr, p.weight_decay, p.batch_size, p.epochs) == (0.5, 1e-6, 1e-4, 8, 300)


def _snapshot(model):
    return {k: p.data.copy() for k, p in model.named_parameters()}


@pytest.mark.parametrize("make", [tiny_model, tiny_conv_model])
def test_lambda_zero_freezes_generator_side(make):
    model, recs = make(3)
    before = _snapshot(model)
    train(TrainConfig(lam=0.0, epochs=10, batch_size=1, lr=1e-2), recs, [], model, max_steps=10)
    after = _snapshot(model)
    for k in before:
        same = np.array_equal(before[k], after[k])
        if k.startswith(("generator.", "expansion.")):
            assert same, k
        elif k.startswith("classifier.") or (k.startswith("encoder.") and before[k].size > 0):
            assert not same, k


@pytest.mark.parametrize("make", [tiny_model, tiny_conv_model])
def test_lambda_one_freezes_classifier_head(make):
    model, recs = make(4)
    before = _snapshot(model)
    train(TrainConfig(lam=1.0, epochs=10, batch_size=1, lr=1e-2), recs, [], model, max_steps=10)
    after = _snapshot(model)
    assert np.array_equal(before["classifier.W"], after["classifier.W"])
    assert np.array_equal(before["classifier.b"], after["classifier.b"])
    assert not np.array_equal(before["classifier.S"], after["classifier.S"])
    assert not np.array_equal(before["generator.W_p"], after["generator.W_p"])


def test_same_seed_same_log(tmp_path):
    rows = []
    for name in ("a", "b"):
        model, recs = tiny_model(0)
        train(TrainConfig(epochs=3, batch_size=2), recs, recs[:1], model, log_path=tmp_path / f"{name}.csv")
        rows.append((tmp_path / f"{name}.csv").read_text())
    assert rows[0] == rows[1]
    header = next(csv.reader(rows[0].splitlines()))
    assert header == ["epoch", "train_loss", "val_loss", "L_G", "L_C", "state_acc"]


def test_lambda_zero_logs_nan_generator_loss(tmp_path):
    model, recs = tiny_model(0)
    result = train(TrainConfig(lam=0.0, epochs=1), recs, [], model)
    assert math.isnan(result.history[0]["L_G"])


def test_checkpoint_round_trip(tmp_path):
    model, recs = tiny_model(2)
    res = train(TrainConfig(epochs=2, batch_size=2), recs, [], model)
    path = tmp_path / "m.iiht"
    save_checkpoint(path, model, res.optimizer, TrainConfig(epochs=2, batch_size=2), res.steps, 2)
    ck = load_checkpoint(path)
    assert ck.step == res.steps and ck.meta["epoch"] == 2
    assert ck.train_config == TrainConfig(epochs=2, batch_size=2)
    for (k, p), (k2, q) in zip(model.named_parameters(), ck.model.named_parameters()):
        assert k == k2 and np.array_equal(p.data, q.data)
    model.eval()
    ck.model.eval()
    with tn.no_grad():
        a = model.losses(recs)
        b = ck.model.losses(recs)
        ma, _, _ = model.condition(recs)
        mb, _, _ = ck.model.condition(recs)
    assert a[0].item() == b[0].item() and a[1].item() == b[1].item()
    assert np.array_equal(ma.data, mb.data)
    st = res.optimizer.state()
    for k in st["m"]:
        assert np.array_equal(st["m"][k], ck.optimizer_state["m"][k])
        assert st["t"][k] == ck.optimizer_state["t"][k]


def test_checkpoint_rejects_other_files(tmp_path):
    p = tmp_path / "x.iiht"
    p.write_bytes(b"NOPE" + b"\0" * 8)
    with pytest.raises(ValueError, match="not an IIHT checkpoint"):
        load_checkpoint(p)


def test_state_swaps_rerender(rng):
    model, recs = tiny_model(0)
    tpl = model.templates
    out = state_swaps(recs, tpl, rng, prob=1.0, max_swaps=1)
    for rec, item in zip(recs, out):
        labels, report = item
        assert (labels.argmax(1) != rec.states).sum() == 1
        assert report == tpl.render(labels.argmax(1))
    assert state_swaps(recs, tpl, rng, prob=0.0, max_swaps=1) == [None] * len(recs)


def test_training_reduces_loss():
    model, recs = tiny_model(5)
    res = train(TrainConfig(epochs=30, batch_size=3, lr=1e-2), recs, [], model)
    assert res.history[-1]["train_loss"] < res.history[0]["train_loss"]
