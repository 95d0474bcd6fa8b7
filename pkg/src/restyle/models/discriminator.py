"""Naturalness discriminator: LSTM encoder over the sentence, final-state
affine + sigmoid head (zero-initialized, so a fresh model answers 0.5)."""

from __future__ import annotations

import numpy as np

from ..autodiff import (ContractError, Tensor, add, embedding_lookup, matmul,
                        mul, no_grad)
from ..data import PAD, Vocab
from .cells import LSTMCell, uniform_param, zero_param


class NaturalnessDiscriminator:
    def __init__(self, vocab: Vocab, embed_dim: int = 64, hidden_dim: int = 64,
                 seed: int = 0):
        rng = np.random.default_rng(seed)
        self.vocab = vocab
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.emb = uniform_param(rng, (len(vocab), embed_dim))
        self.cell = LSTMCell(embed_dim, hidden_dim, rng)
        self.head_w = zero_param((hidden_dim, 1))
        self.head_b = zero_param((1,))

    def params(self) -> dict:
        out = {"adv.emb": self.emb, "adv.head_w": self.head_w,
               "adv.head_b": self.head_b}
        out.update(self.cell.params("adv.cell"))
        return out

    def hyperparams(self) -> dict:
        return {"embed_dim": self.embed_dim, "hidden_dim": self.hidden_dim}

    def _run(self, steps: list[Tensor], lengths) -> Tensor:
        """Encode per-step (B, d) embeddings; returns (B, 1) logits from each
        sample's final (length-indexed) hidden state."""
        b = steps[0].shape[0]
        hd = self.hidden_dim
        h = Tensor(np.zeros((b, hd)))
        c = Tensor(np.zeros((b, hd)))
        final = Tensor(np.zeros((b, hd)))
        for t, x_t in enumerate(steps):
            h, c = self.cell.step(x_t, h, c)
            pick = np.array([1.0 if l == t + 1 else 0.0 for l in lengths])
            if pick.any():
                ind = np.repeat(pick[:, None], hd, axis=1)
                final = add(final, mul(h, Tensor(ind)))
        return add(matmul(final, self.head_w), self.head_b)

    def logits_ids(self, sentences: list[list[int]]) -> Tensor:
        if any(len(s) == 0 for s in sentences):
            raise ContractError("discriminator: empty sentence")
        lengths = [len(s) for s in sentences]
        padded = max(lengths)
        ids = np.full((len(sentences), padded), PAD, dtype=np.intp)
        for i, s in enumerate(sentences):
            ids[i, :len(s)] = s
        steps = [embedding_lookup(self.emb, ids[:, t]) for t in range(padded)]
        return self._run(steps, lengths)

    def logits_soft(self, step_dists: list[Tensor], lengths) -> Tensor:
        steps = [matmul(p_t, self.emb) for p_t in step_dists]
        if len(steps) < max(lengths):
            raise ContractError("discriminator: fewer steps than max length")
        return self._run(steps, lengths)


def _sigmoid_scalar(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    ez = np.exp(z)
    return ez / (1.0 + ez)


def discriminator_prob(f_adv: NaturalnessDiscriminator, x: list[int]) -> float:
    """Probability that x is a real (natural) sentence."""
    if not x:
        raise ContractError("discriminator_prob: empty sentence")
    with no_grad():
        logit = f_adv.logits_ids([list(x)])
    return _sigmoid_scalar(float(logit.values[0, 0]))


def discriminator_prob_soft(f_adv: NaturalnessDiscriminator,
                            dists: np.ndarray) -> float:
    dists = np.asarray(dists, dtype=np.float64)
    if dists.ndim != 2 or dists.shape[1] != len(f_adv.vocab):
        raise ContractError(
            f"discriminator_prob_soft: expected (T, {len(f_adv.vocab)}) rows, "
            f"got {dists.shape}")
    if dists.shape[0] == 0:
        raise ContractError("discriminator_prob_soft: empty distribution sequence")
    sums = dists.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ContractError(
            "discriminator_prob_soft: distribution row does not sum to 1")
    rows = [Tensor(dists[t:t + 1]) for t in range(dists.shape[0])]
    with no_grad():
        logit = f_adv.logits_soft(rows, [dists.shape[0]])
    return _sigmoid_scalar(float(logit.values[0, 0]))
