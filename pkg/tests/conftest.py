import numpy as np
import pytest

from restyle.autodiff import backward
from restyle.data import EOS, Vocab
from restyle.models import GeneratorModel
from restyle.training import Adam, reconstruction_loss


@pytest.fixture(scope="session")
def small_vocab():
    return Vocab([f"w{i}" for i in range(12)], {})


@pytest.fixture(scope="session")
def copy_sentences(small_vocab):
    """Short id sentences over the non-special vocabulary."""
    rng = np.random.default_rng(42)
    base = 6  # first non-special id
    sents = []
    for _ in range(40):
        length = rng.integers(2, 5)
        sents.append([int(base + rng.integers(12)) for _ in range(length)])
    return sents


@pytest.fixture(scope="session")
def copy_generator(small_vocab, copy_sentences):
    """Generator overfit to reproduce its training sentences (both styles)."""
    g = GeneratorModel(small_vocab, embed_dim=24, hidden_dim=48, seed=123)
    opt = Adam(g.params(), lr=5e-3)
    pairs = [(s, st) for s in copy_sentences for st in (0, 1)]
    rng = np.random.default_rng(7)
    for _ in range(700):
        idx = rng.choice(len(pairs), size=16, replace=False)
        xs = [pairs[i][0] for i in idx]
        styles = [pairs[i][1] for i in idx]
        opt.zero_grad()
        loss = reconstruction_loss(g, xs, styles)
        backward(loss)
        opt.step()
    return g
