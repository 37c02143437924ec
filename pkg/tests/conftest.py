import numpy as np
import pytest
from hypothesis import settings

from graphtoken.backbone import BackboneParams, build_vocab, param_digest
from graphtoken.data import backbone_corpus, load_fixture
from graphtoken.pipeline import Backbone

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def records():
    return load_fixture()


@pytest.fixture(scope="session")
def random_backbone(records):
    """Untrained but frozen LM over the fixture vocabulary; cheap stand-in for unit tests."""
    vocab = build_vocab(backbone_corpus(records))
    params = BackboneParams.init(np.random.default_rng(7), len(vocab), 16, 1, 2)
    params.freeze()
    return Backbone(params, vocab, param_digest(params))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    card = getattr(mod, "SCORECARD", None)
    if card:
        terminalreporter.section("acceptance criteria")
        for n in sorted(card):
            terminalreporter.write_line(card[n])
