import os

import pytest

from morse import kernels as K
from morse.data import build_vocab, parse_trmor
from morse.model import MorseConfig, MorseParams

DATA = os.path.join(os.path.dirname(__file__), "data")

TOY = """\
masalı masal+Noun+A3sg+Pnon+Acc
yaz yaz+Verb+Pos+Imp+A2sg

mavi mavi+Adj
masalı masa+Noun+A3sg+Pnon+Nom^DB+Adj+With
oda oda+Noun+A3sg+Pnon+Nom
"""


def data_path(name):
    return os.path.join(DATA, name)


def read_data(name):
    with open(data_path(name), encoding="utf-8") as fh:
        return fh.read()


@pytest.fixture
def toy():
    return parse_trmor(TOY)


def tiny_params(sents, seed=0, **kw):
    cfg = MorseConfig(**{"hidden_size": 8, "char_embed_size": 4, "feat_embed_size": 4, **kw})
    return MorseParams.init(cfg, build_vocab(sents), K.make_rng(seed))


# verdict lines from test_acceptance, echoed once in the terminal summary
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
