"""Recurrent language model used for the fluency reward and for evaluation
perplexity. Scoring includes the end-of-sentence prediction: a sentence of
n tokens is charged for n + 1 next-token predictions."""

from __future__ import annotations

import numpy as np

from ..autodiff import (ContractError, Tensor, add, embedding_lookup,
                        log_softmax, matmul, mul, tsum)
from ..data import BOS, EOS, PAD, Vocab
from .cells import GRUCell, uniform_param, zero_param


class NeuralLM:
    def __init__(self, vocab: Vocab, embed_dim: int = 64, hidden_dim: int = 128,
                 seed: int = 0, zero_output: bool = False):
        rng = np.random.default_rng(seed)
        self.vocab = vocab
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.fingerprint = ""  # which split the model was fitted on
        v = len(vocab)
        self.emb = uniform_param(rng, (v, embed_dim))
        self.cell = GRUCell(embed_dim, hidden_dim, rng)
        self.w_out = zero_param((hidden_dim, v)) if zero_output \
            else uniform_param(rng, (hidden_dim, v))
        self.b_out = zero_param((v,))

    def params(self) -> dict:
        out = {"lm.emb": self.emb, "lm.w_out": self.w_out, "lm.b_out": self.b_out}
        out.update(self.cell.params("lm.cell"))
        return out

    def hyperparams(self) -> dict:
        return {"embed_dim": self.embed_dim, "hidden_dim": self.hidden_dim,
                "fingerprint": self.fingerprint}

    def token_logprobs(self, sentences: list[list[int]]) -> list[np.ndarray]:
        """Per-sentence arrays of log p(w_t | w_<t), EOS step included."""
        b = len(sentences)
        lengths = [len(s) + 1 for s in sentences]
        maxlen = max(lengths)
        inputs = np.full((b, maxlen), PAD, dtype=np.intp)
        targets = np.full((b, maxlen), PAD, dtype=np.intp)
        for i, s in enumerate(sentences):
            inputs[i, 0] = BOS
            inputs[i, 1:len(s) + 1] = s
            targets[i, :len(s)] = s
            targets[i, len(s)] = EOS
        h = np.zeros((b, self.hidden_dim))
        emb = self.emb.values
        out = np.zeros((b, maxlen))
        for t in range(maxlen):
            h = self.cell.step_np(emb[inputs[:, t]], h)
            logits = h @ self.w_out.values + self.b_out.values
            z = logits - logits.max(axis=1, keepdims=True)
            logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
            out[:, t] = logp[np.arange(b), targets[:, t]]
        return [out[i, :lengths[i]] for i in range(b)]

    def nll_loss(self, sentences: list[list[int]]) -> Tensor:
        """Taped mean per-token negative log-likelihood over a batch."""
        b = len(sentences)
        v = len(self.vocab)
        lengths = np.array([len(s) + 1 for s in sentences], dtype=np.float64)
        maxlen = int(lengths.max())
        inputs = np.full((b, maxlen), PAD, dtype=np.intp)
        onehot = [np.zeros((b, v)) for _ in range(maxlen)]
        for i, s in enumerate(sentences):
            inputs[i, 0] = BOS
            inputs[i, 1:len(s) + 1] = s
            for t, tok in enumerate(list(s) + [EOS]):
                onehot[t][i, tok] = 1.0
        h = Tensor(np.zeros((b, self.hidden_dim)))
        total = Tensor(np.zeros((b,)))
        for t in range(maxlen):
            h = self.cell.step(embedding_lookup(self.emb, inputs[:, t]), h)
            logits = add(matmul(h, self.w_out), self.b_out)
            logp = log_softmax(logits, axis=1)
            total = add(total, tsum(mul(logp, Tensor(onehot[t])), axis=1))
        per_token = mul(total, Tensor(-1.0 / lengths))
        from ..autodiff import tmean

        return tmean(per_token)


def lm_perplexity(lm: NeuralLM, x: list[int]) -> float:
    """Length-normalized perplexity exp(-(1/|x|) sum log p), EOS counted."""
    if not x:
        raise ContractError("lm_perplexity: empty sentence")
    logp = lm.token_logprobs([list(x)])[0]
    return float(np.exp(-logp.mean()))


def lm_perplexity_batch(lm: NeuralLM, sentences: list[list[int]]) -> np.ndarray:
    if any(not s for s in sentences):
        raise ContractError("lm_perplexity: empty sentence")
    rows = lm.token_logprobs([list(s) for s in sentences])
    return np.array([float(np.exp(-r.mean())) for r in rows])
