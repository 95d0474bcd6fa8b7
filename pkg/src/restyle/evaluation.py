"""Automatic metrics (accuracy, perplexity, BLEU, SIM) and the
metric-gaming audit probes (first-token ablation, class-skew scan).

All computations here are pure over immutable models and safe to fan out
across sentences.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .data import UNK, StyledCorpus, Vocab
from .models import NeuralLM
from .rewards import SimModel, sim_score

UNK_TOKEN = "<unk>"


# ---------------------------------------------------------------------------
# external style classifier (distinct architecture from the training signal)


class EvalClassifier:
    """Linear classifier over hashed 1- and 2-gram features.

    Deterministic crc32 hashing into 2^18 buckets; per-style weight rows
    trained with logistic (softmax) loss. Scores are log-odds.
    """

    N_BUCKETS = 1 << 18

    def __init__(self, buckets: int = N_BUCKETS):
        self.buckets = buckets
        self.weights = np.zeros((2, buckets))
        self.bias = np.zeros(2)

    def feature_ids(self, tokens: list[str]) -> np.ndarray:
        feats = list(tokens)
        feats.extend(f"{a} {b}" for a, b in zip(tokens, tokens[1:]))
        return np.array([zlib.crc32(f.encode("utf-8")) % self.buckets
                         for f in feats], dtype=np.intp)

    def scores(self, tokens: list[str]) -> np.ndarray:
        idx = self.feature_ids(tokens)
        if idx.size == 0:
            return self.bias.copy()
        return self.weights[:, idx].sum(axis=1) + self.bias

    def predict(self, tokens: list[str]) -> int:
        s = self.scores(tokens)
        return int(s[1] > s[0])

    def fit(self, sentences: list[list[str]], labels: list[int],
            epochs: int = 5, lr: float = 0.1, seed: int = 0) -> "EvalClassifier":
        rng = np.random.default_rng(seed)
        feats = [self.feature_ids(s) for s in sentences]
        labels = np.asarray(labels)
        order = np.arange(len(sentences))
        for _ in range(epochs):
            rng.shuffle(order)
            for i in order:
                idx = feats[i]
                z = (self.weights[:, idx].sum(axis=1) if idx.size else
                     np.zeros(2)) + self.bias
                z -= z.max()
                p = np.exp(z)
                p /= p.sum()
                p[labels[i]] -= 1.0
                if idx.size:
                    self.weights[:, idx] -= lr * p[:, None]
                self.bias -= lr * p
        return self


def train_eval_classifier(corpus: StyledCorpus, epochs: int = 5,
                          lr: float = 0.1, seed: int = 0) -> EvalClassifier:
    sentences = list(corpus.train[0]) + list(corpus.train[1])
    labels = [0] * len(corpus.train[0]) + [1] * len(corpus.train[1])
    return EvalClassifier().fit(sentences, labels, epochs=epochs, lr=lr, seed=seed)


def style_accuracy(clf: EvalClassifier, outputs: list[list[str]],
                   targets: list[int]) -> float:
    """Fraction of outputs classified as their target style."""
    if not outputs:
        raise ValueError("style_accuracy: no outputs")
    hits = sum(1 for out, tgt in zip(outputs, targets)
               if clf.predict(out) == tgt)
    return hits / len(outputs)


# ---------------------------------------------------------------------------
# BLEU


def _ngram_counts(tokens: list[str], n: int) -> dict:
    counts: dict = {}
    for i in range(len(tokens) - n + 1):
        key = tuple(tokens[i:i + n])
        counts[key] = counts.get(key, 0) + 1
    return counts


def corpus_bleu(hypotheses: list[list[str]], references: list[list[list[str]]],
                max_n: int = 4) -> float:
    """Corpus BLEU in [0, 100]: geometric mean of modified n-gram precisions
    times the brevity penalty. If any used precision is zero, counts for
    n >= 2 are add-one smoothed (order-1 stays raw).
    """
    if len(hypotheses) != len(references):
        raise ValueError("corpus_bleu: hypothesis / reference length mismatch")
    match = np.zeros(max_n)
    total = np.zeros(max_n)
    hyp_len = 0
    ref_len = 0
    for hyp, refs in zip(hypotheses, references):
        if not refs:
            raise ValueError("corpus_bleu: empty reference set")
        hyp_len += len(hyp)
        ref_len += min((len(r) for r in refs),
                       key=lambda rl: (abs(rl - len(hyp)), rl))
        if not hyp:
            continue  # empty hypothesis contributes zero counts
        for n in range(1, max_n + 1):
            counts = _ngram_counts(hyp, n)
            if not counts:
                continue
            clip: dict = {}
            for r in refs:
                for key, c in _ngram_counts(r, n).items():
                    clip[key] = max(clip.get(key, 0), c)
            for key, c in counts.items():
                match[n - 1] += min(c, clip.get(key, 0))
                total[n - 1] += c
    used = [n for n in range(1, max_n + 1) if total[n - 1] > 0]
    if not used or hyp_len == 0:
        return 0.0
    precisions = {}
    smooth = any(match[n - 1] == 0 for n in used)
    for n in used:
        m, t = match[n - 1], total[n - 1]
        if smooth and n >= 2:
            m, t = m + 1.0, t + 1.0
        precisions[n] = m / t
    if precisions[used[0]] == 0.0:
        return 0.0
    log_avg = float(np.mean([np.log(precisions[n]) for n in used]))
    bp = 1.0 if hyp_len > ref_len else float(np.exp(1.0 - ref_len / hyp_len))
    return 100.0 * bp * float(np.exp(log_avg))


# ---------------------------------------------------------------------------
# perplexity


def corpus_perplexity(lm: NeuralLM, outputs: list[list[int]]) -> float:
    """exp of corpus-level mean per-token NLL; empty outputs are scored as a
    single UNK token so degenerate decodes stay visible in the metric."""
    if not outputs:
        raise ValueError("corpus_perplexity: no outputs")
    sents = [list(s) if s else [UNK] for s in outputs]
    total_nll = 0.0
    total_tokens = 0
    for start in range(0, len(sents), 256):
        chunk = sents[start:start + 256]
        for row in lm.token_logprobs(chunk):
            total_nll -= float(row.sum())
            total_tokens += row.size
    return float(np.exp(total_nll / total_tokens))


# ---------------------------------------------------------------------------
# reports


@dataclass
class MetricsReport:
    accuracy: float
    perplexity: float
    self_bleu: float
    self_sim: float
    ref_bleu: float | None = None
    ref_sim: float | None = None
    sample_count: int = 0
    model_id: str = ""
    config_id: str = ""

    FIELDS = ("accuracy", "perplexity", "self_bleu", "self_sim", "ref_bleu",
              "ref_sim", "sample_count", "model_id", "config_id")

    def to_kv_lines(self) -> list[str]:
        lines = []
        for name in self.FIELDS:
            value = getattr(self, name)
            rendered = "" if value is None else repr(value)
            lines.append(f"{name} = {rendered}")
        return lines

    @classmethod
    def from_kv_lines(cls, lines: list[str]) -> "MetricsReport":
        values = {}
        for line in lines:
            if "=" not in line:
                continue
            key, _, raw = line.partition("=")
            key = key.strip()
            raw = raw.strip()
            if key not in cls.FIELDS:
                continue
            if raw == "":
                values[key] = None
            elif key in ("model_id", "config_id"):
                values[key] = raw.strip("'\"")
            elif key == "sample_count":
                values[key] = int(raw)
            else:
                values[key] = float(raw)
        return cls(**values)

    def to_csv(self) -> str:
        header = ",".join(self.FIELDS)
        row = ",".join("" if getattr(self, f) is None else str(getattr(self, f))
                       for f in self.FIELDS)
        return header + "\n" + row + "\n"


@dataclass
class AuditReport:
    skew_table: list = field(default_factory=list)  # (token, c0, c1, skew)
    flagged: list = field(default_factory=list)
    injection_rate: float | None = None
    acc_before: float | None = None
    acc_after: float | None = None

    def to_kv_lines(self) -> list[str]:
        lines = [
            f"acc_before = {'' if self.acc_before is None else repr(self.acc_before)}",
            f"acc_after = {'' if self.acc_after is None else repr(self.acc_after)}",
            f"injection_rate = "
            f"{'' if self.injection_rate is None else repr(self.injection_rate)}",
            f"flagged = {' '.join(self.flagged)}",
        ]
        return lines

    def skew_csv(self) -> str:
        lines = ["token,count_style0,count_style1,skew,flagged"]
        for token, c0, c1, skew in self.skew_table:
            lines.append(f"{token},{c0},{c1},{skew!r},"
                         f"{int(token in self.flagged)}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# audit probes


def first_token_ablation(clf: EvalClassifier, outputs: list[list[str]],
                         targets: list[int]) -> tuple[float, float]:
    """Accuracy before and after dropping each output's first token;
    outputs of length <= 1 ablate to a single UNK."""
    before = style_accuracy(clf, outputs, targets)
    ablated = [out[1:] if len(out) > 1 else [UNK_TOKEN] for out in outputs]
    after = style_accuracy(clf, ablated, targets)
    return before, after


def token_class_counts(corpus: StyledCorpus) -> dict[str, list]:
    counts: dict[str, list] = {}
    for style in (0, 1):
        for sent in corpus.train[style]:
            for tok in sent:
                if tok not in counts:
                    counts[tok] = [0, 0]
                counts[tok][style] += 1
    return counts


def class_skew_audit(corpus: StyledCorpus, outputs: list[list[str]],
                     min_count: int = 5, skew_threshold: float = 0.9,
                     sources: list[list[str]] | None = None) -> AuditReport:
    """Flag class-skewed training tokens that the outputs over-produce.

    skew(token) = majority-class share of its training occurrences. A token
    is flagged when skew >= threshold and its output frequency is at least
    3x its source-side frequency. The injection-rate estimate is the share
    of outputs whose first token was changed to a skewed token.
    """
    if min_count < 1:
        raise ValueError("class_skew_audit: min_count must be >= 1")
    if not 0.5 < skew_threshold <= 1.0:
        raise ValueError("class_skew_audit: skew_threshold must be in (0.5, 1]")
    if sources is None:
        sources = list(corpus.test[0]) + list(corpus.test[1])
    counts = token_class_counts(corpus)
    skew_table = []
    skew_of = {}
    for tok in sorted(counts):
        c0, c1 = counts[tok]
        if c0 + c1 < min_count:
            continue
        skew = max(c0, c1) / (c0 + c1)
        skew_table.append((tok, c0, c1, skew))
        skew_of[tok] = skew

    def freq(sentences):
        f: dict[str, int] = {}
        for sent in sentences:
            for tok in sent:
                f[tok] = f.get(tok, 0) + 1
        return f

    out_freq = freq(outputs)
    src_freq = freq(sources)
    flagged = [tok for tok, _, _, skew in skew_table
               if skew >= skew_threshold
               and out_freq.get(tok, 0) >= 3 * max(src_freq.get(tok, 0), 1)]

    injection_rate = None
    if sources and len(sources) == len(outputs):
        injected = 0
        for src, out in zip(sources, outputs):
            if not out:
                continue
            first = out[0]
            src_first = src[0] if src else None
            if first != src_first and skew_of.get(first, 0.0) >= skew_threshold:
                injected += 1
        injection_rate = injected / len(outputs)
    return AuditReport(skew_table=skew_table, flagged=flagged,
                       injection_rate=injection_rate)


def run_audit(clf: EvalClassifier, corpus: StyledCorpus,
              outputs: list[list[str]], targets: list[int],
              sources: list[list[str]] | None = None, min_count: int = 5,
              skew_threshold: float = 0.9) -> AuditReport:
    report = class_skew_audit(corpus, outputs, min_count=min_count,
                              skew_threshold=skew_threshold, sources=sources)
    report.acc_before, report.acc_after = first_token_ablation(
        clf, outputs, targets)
    return report


# ---------------------------------------------------------------------------
# full evaluation


def transfer_corpus(gen, test_pair, batch_size: int = 128
                    ) -> tuple[list[list[str]], list[list[str]], list[int]]:
    """Greedy-transfer every test sentence to the opposite style.

    Returns (sources, outputs, target_styles) as token lists.
    """
    from .models import greedy_decode_batch

    vocab: Vocab = gen.vocab
    sources, outputs, targets = [], [], []
    for style in (0, 1):
        sents = test_pair[style]
        for start in range(0, len(sents), batch_size):
            chunk = sents[start:start + batch_size]
            ids = [vocab.encode(s) for s in chunk]
            outs = greedy_decode_batch(gen, ids, [1 - style] * len(chunk))
            for src, out in zip(chunk, outs):
                sources.append(list(src))
                outputs.append(vocab.decode(out))
                targets.append(1 - style)
    return sources, outputs, targets


def evaluate_all(gen, clf: EvalClassifier, lm: NeuralLM, sim: SimModel,
                 corpus: StyledCorpus, refs=None, oracle: str | None = None,
                 model_id: str = "", config_id: str = "") -> MetricsReport:
    """Transfer the test split and assemble the metric report."""
    if oracle == "copy":
        sources, outputs, targets = [], [], []
        for style in (0, 1):
            for sent in corpus.test[style]:
                sources.append(list(sent))
                outputs.append(list(sent))
                targets.append(1 - style)
    elif oracle is None:
        sources, outputs, targets = transfer_corpus(gen, corpus.test)
    else:
        raise ValueError(f"unknown oracle mode: {oracle}")

    acc = style_accuracy(clf, outputs, targets)
    out_ids = [lm.vocab.encode(o) for o in outputs]
    ppl = corpus_perplexity(lm, out_ids)
    self_bleu = corpus_bleu(outputs, [[s] for s in sources])
    self_sim = float(np.mean([
        sim_score(sim, s, o if o else [UNK_TOKEN])
        for s, o in zip(sources, outputs)]))
    report = MetricsReport(accuracy=acc, perplexity=ppl, self_bleu=self_bleu,
                           self_sim=self_sim, sample_count=len(outputs),
                           model_id=model_id, config_id=config_id)
    if refs is not None:
        ref_list = list(refs[0]) + list(refs[1])
        if len(ref_list) != len(outputs):
            raise ValueError("evaluate_all: references misaligned with test split")
        report.ref_bleu = corpus_bleu(outputs, [[r] for r in ref_list])
        report.ref_sim = float(np.mean([
            sim_score(sim, r, o if o else [UNK_TOKEN])
            for r, o in zip(ref_list, outputs)]))
    return report
