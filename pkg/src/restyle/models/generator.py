"""Style-conditioned sequence-completion generator.

The generator consumes [BOS] + source tokens + a target-style token, then
continues autoregressively; the continuation is the transfer output. A
single-layer GRU with tied-nothing embeddings keeps training minutes-scale.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import (Tensor, add, embedding_lookup, log_softmax, matmul,
                        mul, softmax, tsum)
from ..data import BOS, EOS, PAD, STYLE0, STYLE1, UNK, Vocab
from .cells import GRUCell, uniform_param, zero_param

# ids the decoder must never emit; EOS stays allowed so decoding can stop
BANNED_OUTPUT_IDS = (PAD, BOS, STYLE0, STYLE1)


class GeneratorModel:
    def __init__(self, vocab: Vocab, embed_dim: int = 64, hidden_dim: int = 128,
                 seed: int = 0, max_len_slack: int = 5):
        rng = np.random.default_rng(seed)
        self.vocab = vocab
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.max_len_slack = max_len_slack
        v = len(vocab)
        self.emb = uniform_param(rng, (v, embed_dim))
        self.cell = GRUCell(embed_dim, hidden_dim, rng)
        self.w_out = uniform_param(rng, (hidden_dim, v))
        self.b_out = zero_param((v,))
        self._decode_mask = np.zeros(v)
        self._decode_mask[list(BANNED_OUTPUT_IDS)] = -1e30

    def params(self) -> dict:
        out = {"gen.emb": self.emb, "gen.w_out": self.w_out,
               "gen.b_out": self.b_out}
        out.update(self.cell.params("gen.cell"))
        return out

    def hyperparams(self) -> dict:
        return {"embed_dim": self.embed_dim, "hidden_dim": self.hidden_dim,
                "max_len_slack": self.max_len_slack}

    def context_ids(self, x: list[int], target_style: int) -> list[int]:
        style_tok = STYLE1 if target_style == 1 else STYLE0
        return [BOS] + list(x) + [style_tok]

    # ------------------------------------------------------------------
    # numpy fast paths (no tape)

    def _logits_np(self, h: np.ndarray) -> np.ndarray:
        return h @ self.w_out.values + self.b_out.values

    def _consume_np(self, ids_rows: list[list[int]]) -> np.ndarray:
        """Run the cell over ragged contexts; returns final states (B, h)."""
        b = len(ids_rows)
        h = np.zeros((b, self.hidden_dim))
        emb = self.emb.values
        maxlen = max(len(r) for r in ids_rows)
        for t in range(maxlen):
            active = [i for i, r in enumerate(ids_rows) if t < len(r)]
            if len(active) == b:
                x = emb[[r[t] for r in ids_rows]]
                h = self.cell.step_np(x, h)
            else:
                idx = np.array(active)
                x = emb[[ids_rows[i][t] for i in active]]
                h[idx] = self.cell.step_np(x, h[idx])
        return h


def _check_ids(vocab: Vocab, ids, what: str) -> None:
    v = len(vocab)
    for i in ids:
        if not 0 <= i < v:
            raise ValueError(f"{what}: id {i} out of vocabulary (size {v})")


def generator_logprobs(model: GeneratorModel, x: list[int], style: int,
                       y: list[int]) -> np.ndarray:
    """Per-step log p(y_t | y_<t, x, style); y must end with EOS."""
    if not x:
        raise ValueError("generator_logprobs: empty source sentence")
    if not y or y[-1] != EOS:
        raise ValueError("generator_logprobs: target must end with EOS")
    _check_ids(model.vocab, x, "generator_logprobs")
    _check_ids(model.vocab, y, "generator_logprobs")
    seq = model.context_ids(x, style) + list(y[:-1])
    ctx_len = len(x) + 2
    h = np.zeros((1, model.hidden_dim))
    out = np.zeros(len(y))
    emb = model.emb.values
    for t, tok in enumerate(seq):
        h = model.cell.step_np(emb[[tok]], h)
        if t >= ctx_len - 1:
            logits = model._logits_np(h)[0]
            z = logits - logits.max()
            logp = z - np.log(np.exp(z).sum())
            out[t - (ctx_len - 1)] = logp[y[t - (ctx_len - 1)]]
    return out


def greedy_decode(model: GeneratorModel, x: list[int], style: int,
                  max_len: int | None = None) -> list[int]:
    """Deterministic argmax decoding; stops at EOS or max_len."""
    return greedy_decode_batch(model, [x], [style], max_len=max_len)[0]


def greedy_decode_batch(model: GeneratorModel, xs: list[list[int]],
                        styles: list[int],
                        max_len: int | None = None) -> list[list[int]]:
    if not xs:
        return []
    for x in xs:
        _check_ids(model.vocab, x, "greedy_decode")
    limits = [max_len if max_len is not None else len(x) + model.max_len_slack
              for x in xs]
    if any(l < 1 for l in limits):
        raise ValueError("greedy_decode: max_len must be >= 1")
    ctxs = [model.context_ids(x, s) for x, s in zip(xs, styles)]
    h = model._consume_np(ctxs)
    emb = model.emb.values
    b = len(xs)
    outs: list[list[int]] = [[] for _ in range(b)]
    done = np.zeros(b, dtype=bool)
    for _ in range(max(limits)):
        logits = model._logits_np(h) + model._decode_mask
        nxt = np.argmax(logits, axis=1)
        for i in range(b):
            if done[i]:
                continue
            if nxt[i] == EOS or len(outs[i]) >= limits[i]:
                done[i] = True
            else:
                outs[i].append(int(nxt[i]))
                if len(outs[i]) >= limits[i]:
                    done[i] = True
        if done.all():
            break
        feed = np.where(done, PAD, nxt)
        h = model.cell.step_np(emb[feed], h)
    return outs


def teacher_forced_total_logprob(model: GeneratorModel, xs: list[list[int]],
                                 styles: list[int], ys: list[list[int]]
                                 ) -> tuple[Tensor, np.ndarray]:
    """Taped batched scoring pass.

    Returns (summed log-prob per sample as a (B,) tensor, token counts);
    each y must already end with EOS.
    """
    b = len(xs)
    ctxs = [model.context_ids(x, s) for x, s in zip(xs, styles)]
    fulls = [c + list(y) for c, y in zip(ctxs, ys)]
    seq_len = max(len(f) for f in fulls) - 1
    v = len(model.vocab)
    seq = np.full((b, seq_len), PAD, dtype=np.intp)
    onehot = [np.zeros((b, v)) for _ in range(seq_len)]
    counts = np.zeros(b)
    for i, (ctx, full) in enumerate(zip(ctxs, fulls)):
        seq[i, :len(full) - 1] = full[:-1]
        for t in range(len(ctx) - 1, len(full) - 1):
            onehot[t][i, full[t + 1]] = 1.0
            counts[i] += 1
    h = Tensor(np.zeros((b, model.hidden_dim)))
    total = Tensor(np.zeros((b,)))
    for t in range(seq_len):
        x_t = embedding_lookup(model.emb, seq[:, t])
        h = model.cell.step(x_t, h)
        if not onehot[t].any():
            continue
        logits = add(matmul(h, model.w_out), model.b_out)
        logp = log_softmax(logits, axis=1)
        total = add(total, tsum(mul(logp, Tensor(onehot[t])), axis=1))
    return total, counts


def soft_unroll(model: GeneratorModel, xs: list[list[int]], styles: list[int],
                max_len: int | None = None
                ) -> tuple[list[Tensor], list[list[int]], np.ndarray]:
    """Taped decoding pass emitting per-step output distributions.

    The argmax token is fed forward as the next input (a constant), while
    gradients flow from each step's distribution back into the parameters.
    Returns (per-step (B, V) distribution tensors, decoded token rows,
    per-sample emitted lengths).
    """
    b = len(xs)
    limits = [max_len if max_len is not None else len(x) + model.max_len_slack
              for x in xs]
    ctxs = [model.context_ids(x, s) for x, s in zip(xs, styles)]
    ctx_lens = [len(c) for c in ctxs]
    ctx_len = max(ctx_lens)
    seq = np.full((b, ctx_len), PAD, dtype=np.intp)
    for i, c in enumerate(ctxs):
        seq[i, :len(c)] = c
    # ragged contexts: rows that already consumed their context keep their
    # state (matches the numpy decode path exactly)
    h = Tensor(np.zeros((b, model.hidden_dim)))
    hd = model.hidden_dim
    for t in range(ctx_len):
        h_next = model.cell.step(embedding_lookup(model.emb, seq[:, t]), h)
        active = np.array([t < l for l in ctx_lens], dtype=np.float64)
        if active.all():
            h = h_next
        else:
            ind = np.repeat(active[:, None], hd, axis=1)
            h = add(mul(h_next, Tensor(ind)), mul(h, Tensor(1.0 - ind)))

    mask = Tensor(np.broadcast_to(model._decode_mask, (b, len(model.vocab))).copy())
    dists: list[Tensor] = []
    outs: list[list[int]] = [[] for _ in range(b)]
    done = np.zeros(b, dtype=bool)
    lengths = np.zeros(b, dtype=int)
    for _ in range(max(limits)):
        logits = add(add(matmul(h, model.w_out), model.b_out), mask)
        p_t = softmax(logits, axis=1)
        nxt = np.argmax(p_t.values, axis=1)
        for i in range(b):
            if done[i]:
                continue
            if nxt[i] == EOS or lengths[i] >= limits[i]:
                done[i] = True
            else:
                outs[i].append(int(nxt[i]))
                lengths[i] += 1
                if lengths[i] >= limits[i]:
                    done[i] = True
        dists.append(p_t)
        if done.all():
            break
        feed = np.where(done, PAD, nxt)
        h = model.cell.step(embedding_lookup(model.emb, feed), h)
    return dists, outs, lengths
