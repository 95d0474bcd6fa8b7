"""Shared fixture builders for the audit probes and scenario runs."""

import numpy as np

from restyle.data import (LEXICON0, LEXICON1, MILD0, MILD1, SyntheticSpec,
                          gen_synthetic)

STRONG = (LEXICON0, LEXICON1)
MILD = (MILD0, MILD1)


def audit_corpus_spec(seed=33, sizes=(2000, 200, 200)):
    """Corpus whose mild polarity tier makes prefix injection fool the eval
    classifier (mild words are rarer and noisier than strong ones)."""
    return SyntheticSpec(sizes=sizes, seed=seed, mild_rate=0.5, mild_noise=0.3)


def injection_fixture(corpus, seed=5):
    """Outputs that prepend a strong target-style word to each opposite-style
    test sentence, leaving the body untouched."""
    rng = np.random.default_rng(seed)
    outputs, targets, sources = [], [], []
    for s in (0, 1):
        tlex = STRONG[1 - s]
        for sent in corpus.test[s]:
            outputs.append([tlex[rng.integers(len(tlex))]] + list(sent))
            targets.append(1 - s)
            sources.append(list(sent))
    return outputs, targets, sources


def robust_fixture(corpus, seed=5):
    """Outputs that replace each polarity word in place with a strong
    target-style word (the intended transfer edit)."""
    rng = np.random.default_rng(seed)
    outputs, targets, sources = [], [], []
    for s in (0, 1):
        tlex = STRONG[1 - s]
        source_words = set(STRONG[s]) | set(MILD[s])
        for sent in corpus.test[s]:
            outputs.append([tlex[rng.integers(len(tlex))]
                            if t in source_words else t for t in sent])
            targets.append(1 - s)
            sources.append(list(sent))
    return outputs, targets, sources


def write_outputs(path, outputs):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for toks in outputs:
            fh.write(" ".join(toks) + "\n")
