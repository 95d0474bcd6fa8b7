"""Scalar reward functions for transfer outputs, plus the SIM sentence model.

All functions are pure given immutable models: identical inputs and model
state produce identical values, so batched scoring may fan out freely.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .data import normalize

log = logging.getLogger("restyle")

PROB_FLOOR = 1e-12  # probabilities are clamped here before log


class SimModel:
    """Mean-of-subword-unit-embedding sentence similarity.

    Units come from an embedding file; sentences are segmented per token by
    greedy longest-match over the unit vocabulary with single-character
    backoff, so any sentence yields at least one unit. Unknown characters
    contribute a zero vector.
    """

    def __init__(self, table: dict[str, np.ndarray], dim: int,
                 duplicate_units: int = 0):
        self.table = table
        self.dim = dim
        self.duplicate_units = duplicate_units
        self._max_unit_len = max((len(u) for u in table), default=1)

    def segment(self, token: str) -> list[str]:
        units = []
        pos = 0
        while pos < len(token):
            end = min(len(token), pos + self._max_unit_len)
            while end > pos + 1 and token[pos:end] not in self.table:
                end -= 1
            units.append(token[pos:end])
            pos = end
        return units

    def sentence_vector(self, text) -> np.ndarray:
        tokens = normalize(text) if isinstance(text, str) else list(text)
        vecs = []
        zero = np.zeros(self.dim)
        for tok in tokens:
            for unit in self.segment(tok):
                vecs.append(self.table.get(unit, zero))
        if not vecs:
            return zero
        return np.mean(vecs, axis=0)


def sim_score(model: SimModel, a, b) -> float:
    """Cosine similarity of the two sentence vectors, in [-1, 1]."""
    va, vb = model.sentence_vector(a), model.sentence_vector(b)
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        log.warning("sim_score: zero-norm sentence vector, returning 0")
        return 0.0
    return float(np.dot(va, vb) / (na * nb))


def _token_count(text) -> int:
    tokens = normalize(text) if isinstance(text, str) else text
    return len(tokens)


def length_penalty(r, h, variant: str = "verbatim") -> float:
    """Length term over token counts.

    verbatim: e^(1 - min/max), in [1, e); penalize: e^(1 - max/min), in (0, 1].
    """
    lr, lh = _token_count(r), _token_count(h)
    if lr == 0 or lh == 0:
        raise ValueError("length_penalty: both texts must be nonempty")
    lo, hi = min(lr, lh), max(lr, lh)
    if variant == "verbatim":
        return math.exp(1.0 - lo / hi)
    if variant == "penalize":
        return math.exp(1.0 - hi / lo)
    raise ValueError(f"unknown lp variant: {variant}")


def simile_reward(model: SimModel, x, y, alpha: float = 0.25,
                  lp_variant: str = "verbatim") -> float:
    """Content preservation: length term to the alpha power times SIM."""
    if alpha < 0:
        raise ValueError("simile_reward: alpha must be nonnegative")
    return length_penalty(x, y, lp_variant) ** alpha * sim_score(model, x, y)


def style_reward(f_cls, x, target: int) -> float:
    """Log-likelihood that x is coherent with the target style; always <= 0."""
    from .models import classifier_prob

    p = classifier_prob(f_cls, x, target)
    if p < PROB_FLOOR:
        log.warning("style_reward: probability %.3g clamped", p)
        p = PROB_FLOOR
    return math.log(p)


def naturalness_reward(f_adv, x) -> float:
    """Log-likelihood that x looks like a real sentence; always <= 0."""
    from .models import discriminator_prob

    p = discriminator_prob(f_adv, x)
    if p < PROB_FLOOR:
        log.warning("naturalness_reward: probability %.3g clamped", p)
        p = PROB_FLOOR
    return math.log(p)


def fluency_reward(lm, x_ids, y_ids) -> float:
    """Perplexity of the source minus perplexity of the output (higher is
    better when the output is more fluent than its source)."""
    from .models import lm_perplexity

    return lm_perplexity(lm, x_ids) - lm_perplexity(lm, y_ids)


def bleu_reward(x, y) -> float:
    """Smoothed sentence-level BLEU of y against reference x, in [0, 1]."""
    from .evaluation import corpus_bleu

    xt = normalize(x) if isinstance(x, str) else list(x)
    yt = normalize(y) if isinstance(y, str) else list(y)
    if not xt or not yt:
        raise ValueError("bleu_reward: both sentences must be nonempty")
    return corpus_bleu([yt], [[xt]]) / 100.0


@dataclass
class RewardWeights:
    """Loss-term weights for the fine-tuning objective plus the length
    exponent; the bootstrap stage uses its own (cyc, cls, rec) triple."""

    cls: float = 1.0
    adv: float = 0.5
    sim: float = 20.0
    lang: float = 2.0
    rec: float = 1.0
    cyc: float = 0.0
    alpha: float = 0.25

    def validate(self) -> None:
        for name in ("cls", "adv", "sim", "lang", "rec", "cyc", "alpha"):
            if getattr(self, name) < 0:
                raise ValueError(f"reward weight {name} must be nonnegative")


def bootstrap_weights() -> RewardWeights:
    return RewardWeights(cls=2.0, adv=0.0, sim=0.0, lang=0.0, rec=1.0, cyc=1.0)
