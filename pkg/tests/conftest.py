import random

import pytest
import torch

from dialsum.corpus import AGENT, CUSTOMER, Dialogue, Vocabulary, make_batch, pair_utterances
from dialsum.model import ModelConfig, build_model


VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line)


def words(n, prefix="w"):
    return [f"{prefix}{i}" for i in range(n)]


def tiny_model(vocab_words=8, latent=4, hidden=8, embed=6, heads=2, arch="recurrent", seed=0, dtype=torch.float64):
    cv, av = Vocabulary(CUSTOMER, words(vocab_words, "c")), Vocabulary(AGENT, words(vocab_words, "a"))
    cfg = ModelConfig(arch=arch, embed_dim=embed, hidden=hidden, latent_dim=latent, prior_hidden=hidden,
                      heads=heads, sentence_heads=heads)
    return build_model(cfg, cv, av, seed=seed).to(dtype)


def random_dialogues(n, vocab_words=8, max_len=5, pairs=(1, 3), seed=0, domains=None):
    rng = random.Random(seed)
    out = []
    for i in range(n):
        turns = []
        for _ in range(rng.randint(*pairs)):
            turns.append((CUSTOMER, [f"c{rng.randrange(vocab_words)}" for _ in range(rng.randint(1, max_len))]))
            turns.append((AGENT, [f"a{rng.randrange(vocab_words)}" for _ in range(rng.randint(1, max_len))]))
        out.append(Dialogue(f"r{i}", turns, [domains[i % len(domains)]] if domains else []))
    return out


def batch_for(model, dialogues):
    pairs = [p for d in dialogues for p in pair_utterances(d)]
    return make_batch(pairs, model.vocabs[CUSTOMER], model.vocabs[AGENT])


@pytest.fixture
def model():
    return tiny_model()
