"""Shared fixtures: hand-built scan bundles and a small trained checkpoint."""

import numpy as np
import pytest

from rugsense.config import Config
from rugsense.data.bundle import TokenBundle, save_bundle
from rugsense.data.models import TokenDescriptor
from rugsense.evm.disasm import Bytecode
from rugsense.evm.templates import exemplar, plain_token
from rugsense.pipeline import prepare
from rugsense.synthetic import BASE_TIME, _approvals, _organic, _wash, generate
from rugsense.trainer import train

CREATOR = "0x" + "c" * 40
POOL = "0x" + "d" * 40


def blacklist_rug_bundle(seed: int = 0) -> TokenBundle:
    """Sender-blacklist backdoor plus colluder wash trading ending in a dump."""
    rng = np.random.default_rng(seed)
    events = _wash(rng, CREATOR, POOL, BASE_TIME + 100, 18, 160)
    events = sorted(events + _approvals(rng, events, POOL), key=lambda e: e.sort_key())
    tok = TokenDescriptor("0x" + "e" * 40, 18, CREATOR, BASE_TIME, Bytecode(exemplar("ADDR")))
    return TokenBundle(tok, tuple(events), "rugpull")


def benign_bundle(seed: int = 1) -> TokenBundle:
    rng = np.random.default_rng(seed)
    events = _organic(rng, CREATOR, POOL, BASE_TIME + 100, 6, 120)
    events = sorted(events + _approvals(rng, events, POOL), key=lambda e: e.sort_key())
    tok = TokenDescriptor("0x" + "f" * 40, 6, CREATOR, BASE_TIME, Bytecode(plain_token()))
    return TokenBundle(tok, tuple(events), "benign")


def small_trained_model(epochs: int = 4):
    cfg = Config(epochs=epochs, patience=epochs)
    samples = [prepare(t.bundle, cfg, t.id).sample for t in generate(seed=11, n_rug=8, n_benign=8)]
    return train(samples[:12], samples[12:], cfg).model


@pytest.fixture(scope="session")
def bundles(tmp_path_factory):
    root = tmp_path_factory.mktemp("bundles")
    return {
        "rug": save_bundle(blacklist_rug_bundle(), root / "rug"),
        "benign": save_bundle(benign_bundle(), root / "benign"),
    }


@pytest.fixture(scope="session")
def model_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("model") / "model.json"
    small_trained_model().params.save(p)
    return p


# acceptance lines, filled by test_acceptance and repeated at the end of the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
