import time

import numpy as np
import pytest

from iiht import tensor as tn
from iiht.corpus import CorpusSpec, generate
from iiht.gradcheck import tiny_model
from iiht.model import IIHTModel, ModelConfig
from iiht.templates import IndicatorTemplates
from iiht.tokenizer import train_bpe
from iiht.training import TrainConfig, train

OVERFIT_SEED = 1


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny():
    """(model, records): e=8, passthrough features, two indicators, vocabulary ≤ 12."""
    return tiny_model(0)


class Overfit:
    """Model trained to convergence on 32 synthetic records (shared across tests)."""

    def __init__(self):
        self.spec = CorpusSpec(n_train=32, n_val=0, n_test=0, seed=OVERFIT_SEED)
        self.records, _, _ = generate(self.spec)
        self.templates = IndicatorTemplates.default()
        vocab = train_bpe([r.report for r in self.records], 512)
        self.model_config = ModelConfig(hidden=64, layers=2, heads=4, image_shape=self.spec.image_shape)
        self.train_config = TrainConfig(lr=1e-3, epochs=200)
        self.model = IIHTModel(self.model_config, self.templates, vocab)
        t0 = time.perf_counter()
        self.result = train(self.train_config, self.records, [], self.model)
        self.seconds = time.perf_counter() - t0
        self.model.eval()
        with tn.no_grad():
            loss_g, _, self.stats = self.model.losses(self.records)
        self.loss_g_per_token = loss_g.item() * len(self.records) / self.stats["token_total"]


@pytest.fixture(scope="session")
def overfit():
    return Overfit()


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record an acceptance verdict, then assert it."""

    def record(number, passed, detail):
        ACCEPTANCE[number] = (bool(passed), detail)
        assert passed, f"criterion {number}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE, key=lambda k: (len(str(k)), str(k))):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}")
