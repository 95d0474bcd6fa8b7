"""Style classifier: multi-width text CNN with a style-indexed logit head.

The pooled convolution features pass through one shared tanh layer; the
queried style then selects its own head row (a 2 x hidden table) for the
logit. Heads are zero-initialized, so a fresh model answers exactly 0.5
for either style, while gradients into the style rows are first-order in
the feature differences between classes.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import (ContractError, Tensor, add, concat, conv1d,
                        embedding_lookup, matmul, max_pool_over_time,
                        max_pool_steps, mul, no_grad, tanh)
from ..data import PAD, Vocab
from .cells import uniform_param, zero_param

NEG_INF = -1e9


class StyleClassifier:
    def __init__(self, vocab: Vocab, embed_dim: int = 64, filters: int = 32,
                 widths: tuple = (2, 3, 4), inter_dim: int = 64, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.vocab = vocab
        self.embed_dim = embed_dim
        self.filters = filters
        self.widths = tuple(widths)
        self.inter_dim = inter_dim
        v = len(vocab)
        self.w_embed = uniform_param(rng, (v, embed_dim))
        self.conv_w = {w: uniform_param(rng, (w * embed_dim, filters))
                       for w in self.widths}
        self.conv_b = {w: zero_param((filters,)) for w in self.widths}
        feat = filters * len(self.widths)
        self.inter_w = uniform_param(rng, (feat, inter_dim))
        self.inter_b = zero_param((inter_dim,))
        self.style_head = zero_param((2, inter_dim))
        self.style_bias = zero_param((2, 1))
        self._ones_col = Tensor(np.ones((inter_dim, 1)))

    @property
    def min_len(self) -> int:
        return max(self.widths)

    def params(self) -> dict:
        out = {"cls.w_embed": self.w_embed, "cls.inter_w": self.inter_w,
               "cls.inter_b": self.inter_b, "cls.style_head": self.style_head,
               "cls.style_bias": self.style_bias}
        for w in self.widths:
            out[f"cls.conv_w{w}"] = self.conv_w[w]
            out[f"cls.conv_b{w}"] = self.conv_b[w]
        return out

    def hyperparams(self) -> dict:
        return {"embed_dim": self.embed_dim, "filters": self.filters,
                "widths": list(self.widths), "inter_dim": self.inter_dim}

    def _window_mask(self, lengths, padded_len: int, width: int) -> np.ndarray:
        """(B, T', filters) additive mask hiding windows past each length."""
        b = len(lengths)
        tw = padded_len - width + 1
        mask = np.zeros((b, tw, self.filters))
        for i, l in enumerate(lengths):
            valid = max(l, self.min_len) - width + 1
            mask[i, valid:, :] = NEG_INF
        return mask

    def _head(self, pooled: list[Tensor], styles) -> Tensor:
        styles = np.asarray(styles, dtype=np.intp)
        feat = concat(pooled, axis=1)
        hidden = tanh(add(matmul(feat, self.inter_w), self.inter_b))
        rows = embedding_lookup(self.style_head, styles)        # (B, m)
        bias = embedding_lookup(self.style_bias, styles)        # (B, 1)
        return add(matmul(mul(hidden, rows), self._ones_col), bias)

    def logits_ids(self, sentences: list[list[int]], styles) -> Tensor:
        """Discrete path: (B, 1) style-coherence logits from token ids."""
        if any(len(s) == 0 for s in sentences):
            raise ContractError("classifier: empty sentence")
        lengths = [len(s) for s in sentences]
        padded = max(max(lengths), self.min_len)
        ids = np.full((len(sentences), padded), PAD, dtype=np.intp)
        for i, s in enumerate(sentences):
            ids[i, :len(s)] = s
        emb = embedding_lookup(self.w_embed, ids)  # (B, T, d)
        pooled = []
        for w in self.widths:
            pre = add(conv1d(emb, self.conv_w[w], width=w), self.conv_b[w])
            act = add(tanh(pre), Tensor(self._window_mask(lengths, padded, w)))
            pooled.append(max_pool_over_time(act))
        return self._head(pooled, styles)

    def logits_soft(self, step_dists: list, lengths, styles,
                    pad_rows: np.ndarray | None = None) -> Tensor:
        """Soft path: per-step (B, V) distributions instead of token ids.

        Gradients flow through the distributions into whatever produced
        them. Steps past a sample's length are replaced by one-hot PAD
        rows so the two paths see identical padding.
        """
        b = step_dists[0].shape[0] if step_dists else len(lengths)
        v = len(self.vocab)
        if pad_rows is None:
            pad_rows = np.zeros(v)
            pad_rows[PAD] = 1.0
        padded = max(max(lengths), self.min_len)
        steps = []
        for t in range(padded):
            keep = np.array([1.0 if t < l else 0.0 for l in lengths])
            if t < len(step_dists) and keep.any():
                p_t = step_dists[t]
                if keep.all():
                    steps.append(matmul(p_t, self.w_embed))
                    continue
                ind = np.repeat(keep[:, None], v, axis=1)
                fixed = np.where(ind > 0, 0.0, pad_rows[None, :])
                blended = add(mul(p_t, Tensor(ind)), Tensor(fixed))
                steps.append(matmul(blended, self.w_embed))
            else:
                steps.append(matmul(Tensor(np.tile(pad_rows, (b, 1))),
                                    self.w_embed))
        pooled = []
        for w in self.widths:
            windows = []
            mask = self._window_mask(lengths, padded, w)
            for t in range(padded - w + 1):
                window = concat(steps[t:t + w], axis=1)
                pre = add(matmul(window, self.conv_w[w]), self.conv_b[w])
                windows.append(add(tanh(pre), Tensor(mask[:, t, :])))
            pooled.append(max_pool_steps(windows))
        return self._head(pooled, styles)


def _sigmoid_scalar(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    ez = np.exp(z)
    return ez / (1.0 + ez)


def classifier_prob(f_cls: StyleClassifier, x: list[int], style: int) -> float:
    """Probability that sentence x is coherent with the queried style."""
    if not x:
        raise ContractError("classifier_prob: empty sentence")
    with no_grad():
        logit = f_cls.logits_ids([list(x)], [style])
    return _sigmoid_scalar(float(logit.values[0, 0]))


def classifier_prob_soft(f_cls: StyleClassifier, dists: np.ndarray,
                         style: int) -> float:
    """Same as classifier_prob but position i embeds as dists[i] @ W_embed."""
    dists = np.asarray(dists, dtype=np.float64)
    if dists.ndim != 2 or dists.shape[1] != len(f_cls.vocab):
        raise ContractError(
            f"classifier_prob_soft: expected (T, {len(f_cls.vocab)}) rows, "
            f"got {dists.shape}")
    if dists.shape[0] == 0:
        raise ContractError("classifier_prob_soft: empty distribution sequence")
    sums = dists.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ContractError("classifier_prob_soft: distribution row does not sum to 1")
    rows = [Tensor(dists[t:t + 1]) for t in range(dists.shape[0])]
    with no_grad():
        logit = f_cls.logits_soft(rows, [dists.shape[0]], [style])
    return _sigmoid_scalar(float(logit.values[0, 0]))
