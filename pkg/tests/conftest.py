from __future__ import annotations

import pytest
import torch

from dqda import corpus as C
from dqda import encoder as enc
from dqda import synthetic as syn
from dqda.seeding import set_deterministic
from dqda.tokenizer import Tokenizer, train_vocab


@pytest.fixture(autouse=True, scope="session")
def _deterministic():
    set_deterministic()


def tiny_config(vocab_size: int, **kw) -> enc.ModelConfig:
    base = dict(max_seq_len=64, hidden_dim=32, num_layers=2, num_heads=2, ffn_dim=64, dropout_rate=0.1)
    base.update(kw)
    return enc.ModelConfig(vocab_size=vocab_size, **base)


@pytest.fixture(scope="session")
def domain():
    return syn.populate(syn.make_domain("alpha", 0), 40, 40, 0)


@pytest.fixture(scope="session")
def tokenizer(domain):
    texts = [C.question_paragraph(q) for q in domain.questions.values()]
    return Tokenizer(train_vocab(texts, 400, 2))


@pytest.fixture(scope="session")
def config(tokenizer):
    return tiny_config(len(tokenizer))


@pytest.fixture()
def params(config):
    return enc.init_parameters(config, 0)


@pytest.fixture(scope="session")
def split(domain):
    pairs = C.build_pairs(domain.questions, domain.links, 5, 0)
    return C.split_dataset(pairs, 5, 5, 0)


def posts_row(pid, ptype=1, title="T", body="<p>b</p>") -> str:
    from xml.sax.saxutils import quoteattr

    return f'<row Id="{pid}" PostTypeId="{ptype}" Title={quoteattr(title)} Body={quoteattr(body)} />'


def xml_doc(root: str, rows) -> bytes:
    return (f'<?xml version="1.0" encoding="utf-8"?>\n<{root}>\n' + "\n".join(rows) + f"\n</{root}>\n").encode()


def pytest_terminal_summary(terminalreporter):
    import helpers

    if not helpers.ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(helpers.ACCEPTANCE):
        ok, title, detail = helpers.ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")
