"""Two-stage training: cycle-consistency bootstrap, then reward fine-tuning
with alternating discriminator updates.

Gradient routing: the content (SIM or BLEU) and fluency rewards enter
through the score-function (reinforce) estimator on greedy rollouts; the
style and naturalness rewards enter through the soft-embedding relaxation;
the reconstruction term is differentiated directly.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, add, backward, concat, log_softmax, mul, \
    slice_axis, tmean, tsum, zero_grads
from .checkpoint import save_models
from .data import EOS, UNK, StyledCorpus, Vocab, build_vocab
from .evaluation import (EvalClassifier, corpus_bleu, corpus_perplexity,
                         style_accuracy, train_eval_classifier)
from .models import (GeneratorModel, NaturalnessDiscriminator, NeuralLM,
                     StyleClassifier, greedy_decode_batch, soft_unroll,
                     teacher_forced_total_logprob)
from .rewards import RewardWeights, SimModel, bootstrap_weights


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    weights: RewardWeights = field(default_factory=RewardWeights)
    boot_weights: RewardWeights = field(default_factory=bootstrap_weights)
    batch_size: int = 32
    lr_gen: float = 3e-3
    lr_cls: float = 1e-3
    lr_adv: float = 1e-3
    epochs_stage1: int = 8
    epochs_stage2: int = 2
    dev_eval_interval: int = 200
    seed: int = 0
    clf_update: str = "adversarial"  # "adversarial" | "fixed"
    lp_variant: str = "verbatim"
    reward_norm: str = "lang"        # "none" | "lang" | "all"
    content_reward: str = "sim"      # "sim" | "bleu"
    clf_pretrain_epochs: int = 3
    lm_epochs: int = 2
    eval_lm_epochs: int = 3
    holdout_frac: float = 0.1
    dev_limit: int = 0               # cap dev sentences per style (0 = all)

    def validate(self) -> None:
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        for name in ("lr_gen", "lr_cls", "lr_adv"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.epochs_stage1 <= 0 or self.epochs_stage2 <= 0:
            raise ConfigError("epochs must be positive")
        if self.dev_eval_interval <= 0:
            raise ConfigError("dev_eval_interval must be positive")
        if self.clf_update not in ("adversarial", "fixed"):
            raise ConfigError(f"unknown classifier-update mode: {self.clf_update}")
        if self.lp_variant not in ("verbatim", "penalize"):
            raise ConfigError(f"unknown lp_variant: {self.lp_variant}")
        if self.reward_norm not in ("none", "lang", "all"):
            raise ConfigError(f"unknown reward_norm: {self.reward_norm}")
        if self.content_reward not in ("sim", "bleu"):
            raise ConfigError(f"unknown content_reward: {self.content_reward}")
        if not 0.0 <= self.holdout_frac < 0.5:
            raise ConfigError("holdout_frac must be in [0, 0.5)")
        self.weights.validate()
        self.boot_weights.validate()


@dataclass
class CheckpointMeta:
    stage: str
    epoch: int
    batch: int
    accuracy: float      # fraction in [0, 1]
    self_bleu: float     # [0, 100]
    ppl: float
    path: str = ""
    fallback: bool = False

    def selection_mean(self) -> float:
        """Stage-1 criterion: mean of accuracy (percent) and self-BLEU."""
        return (100.0 * self.accuracy + self.self_bleu) / 2.0


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step_count: int
    lr: float
    beta1: float
    beta2: float
    eps: float


class Adam:
    """Adaptive-moment optimizer over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.state = OptimizerState(
            m={k: np.zeros_like(p.values) for k, p in params.items()},
            v={k: np.zeros_like(p.values) for k, p in params.items()},
            step_count=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self) -> None:
        zero_grads(self.params.values())

    def step(self) -> None:
        s = self.state
        s.step_count += 1
        bc1 = 1.0 - s.beta1 ** s.step_count
        bc2 = 1.0 - s.beta2 ** s.step_count
        for k, p in self.params.items():
            g = p.grad
            s.m[k] = s.beta1 * s.m[k] + (1.0 - s.beta1) * g
            s.v[k] = s.beta2 * s.v[k] + (1.0 - s.beta2) * g * g
            p.values -= s.lr * (s.m[k] / bc1) / (np.sqrt(s.v[k] / bc2) + s.eps)


# ---------------------------------------------------------------------------
# taped loss helpers


def _zeros_like_col(z: Tensor) -> Tensor:
    return Tensor(np.zeros(z.values.shape))


def log_sigmoid_cols(z: Tensor) -> tuple[Tensor, Tensor]:
    """(log sigmoid(z), log(1 - sigmoid(z))) for a (B, 1) logit column,
    computed through a two-class log-softmax for stability."""
    pair = concat([z, _zeros_like_col(z)], axis=1)
    lp = log_softmax(pair, axis=1)
    return slice_axis(lp, 1, 0, 1), slice_axis(lp, 1, 1, 2)


def _mean_neg(col: Tensor) -> Tensor:
    return tmean(mul(col, -1.0))


def _substitute_empty(decoded: list[list[int]], stats: dict | None
                      ) -> list[list[int]]:
    out = []
    for seq in decoded:
        if seq:
            out.append(seq)
        else:
            out.append([UNK])
            if stats is not None:
                stats["empty_decode_substituted"] = \
                    stats.get("empty_decode_substituted", 0) + 1
    return out


def reconstruction_loss(g: GeneratorModel, xs: list[list[int]],
                        styles: list[int]) -> Tensor:
    """Teacher-forced NLL (nats/token) of reproducing each x from itself."""
    ys = [list(x) + [EOS] for x in xs]
    total, counts = teacher_forced_total_logprob(g, xs, styles, ys)
    return tmean(mul(total, Tensor(-1.0 / counts)))


def cycle_loss(g: GeneratorModel, xs: list[list[int]], styles: list[int],
               stats: dict | None = None,
               decoded: list[list[int]] | None = None) -> Tensor:
    """NLL (nats/token) of reconstructing x from its own opposite-style
    transfer; the first decoding pass is a constant (no gradient)."""
    if decoded is None:
        with ad.no_grad():
            decoded = greedy_decode_batch(g, xs, [1 - s for s in styles])
    decoded = _substitute_empty(decoded, stats)
    ys = [list(x) + [EOS] for x in xs]
    total, counts = teacher_forced_total_logprob(g, decoded, styles, ys)
    return tmean(mul(total, Tensor(-1.0 / counts)))


def standardize(rewards: np.ndarray) -> np.ndarray:
    std = rewards.std()
    return (rewards - rewards.mean()) / max(std, 1e-6)


def reinforce_step(g: GeneratorModel, batch: list[tuple], reward_fn,
                   weight: float = 1.0, normalize: bool = False,
                   stats: dict | None = None,
                   decoded: list[list[int]] | None = None) -> float:
    """Score-function gradient contribution for a sentence-level reward.

    Greedy-decodes each sample (or reuses `decoded`), treats the reward as
    a constant, and accumulates grads of
    mean_b[-r_b * (1/L_b) sum_t log p(w_t)] scaled by `weight`.
    Returns the unweighted loss value. Non-finite rewards skip the sample.
    """
    if stats is not None:
        stats["reinforce_calls"] = stats.get("reinforce_calls", 0) + 1
    xs = [x for x, _ in batch]
    targets = [1 - s for _, s in batch]
    if decoded is None:
        with ad.no_grad():
            decoded = greedy_decode_batch(g, xs, targets)
    decoded = _substitute_empty(decoded, stats)
    rewards = np.zeros(len(xs))
    keep = np.ones(len(xs), dtype=bool)
    for i, (x, y) in enumerate(zip(xs, decoded)):
        r = float(reward_fn(x, y))
        if math.isfinite(r):
            rewards[i] = r
        else:
            keep[i] = False
            if stats is not None:
                stats["nonfinite_rewards_skipped"] = \
                    stats.get("nonfinite_rewards_skipped", 0) + 1
    if not keep.any():
        return 0.0
    if normalize:
        rewards[keep] = standardize(rewards[keep])
    rewards[~keep] = 0.0
    ys = [list(y) + [EOS] for y in decoded]
    total, counts = teacher_forced_total_logprob(g, xs, targets, ys)
    factors = np.where(keep, -rewards / counts, 0.0) * (len(xs) / max(keep.sum(), 1))
    loss = tmean(mul(total, Tensor(factors)))
    backward(mul(loss, weight))
    return loss.item()


def soft_reward_step(g: GeneratorModel, batch: list[tuple], scorer,
                     weight: float = 1.0, stats: dict | None = None) -> float:
    """Soft-embedding gradient contribution for a token-level scorer.

    Unrolls the generator on the tape (argmax fed forward), feeds the
    per-step distributions to the scorer's soft path, and accumulates grads
    of mean_b[-log scorer_soft(P_b)] scaled by `weight`. Samples whose
    decode is empty are dropped (and counted).
    """
    if stats is not None:
        stats["soft_calls"] = stats.get("soft_calls", 0) + 1
    xs = [x for x, _ in batch]
    targets = [1 - s for _, s in batch]
    dists, outs, lengths = soft_unroll(g, xs, targets)
    keep = lengths > 0
    if stats is not None and not keep.all():
        stats["empty_soft_decodes"] = \
            stats.get("empty_soft_decodes", 0) + int((~keep).sum())
    if not keep.any():
        ad.reset_tape()
        return 0.0
    lengths = np.maximum(lengths, 1)
    if isinstance(scorer, StyleClassifier):
        logits = scorer.logits_soft(dists, list(lengths), targets)
    else:
        logits = scorer.logits_soft(dists, list(lengths))
    logsig, _ = log_sigmoid_cols(logits)
    sel = np.where(keep, -1.0 / keep.sum(), 0.0)[:, None]
    loss = tsum(mul(logsig, Tensor(sel)))
    backward(mul(loss, weight))
    return loss.item()


def update_discriminators(f_cls: StyleClassifier | None,
                          f_adv: NaturalnessDiscriminator | None,
                          real_batch: list[tuple], gen_batch: list[tuple],
                          opt_cls: "Adam | None" = None,
                          opt_adv: "Adam | None" = None,
                          clf_update: str = "adversarial") -> dict:
    """One ascent step for the classifier and/or discriminator objectives.

    real_batch pairs are (ids, true style); gen_batch pairs are
    (decoded ids, target style) and are treated as constants. The
    classifier is skipped entirely in fixed mode.
    """
    losses = {}
    xs = [x for x, _ in real_batch]
    styles = [s for _, s in real_batch]
    gxs = [x if x else [UNK] for x, _ in gen_batch]
    gtargets = [t for _, t in gen_batch]
    if f_cls is not None and clf_update == "adversarial":
        opt_cls.zero_grad()
        ls_real, _ = log_sigmoid_cols(f_cls.logits_ids(xs, styles))
        _, l1m_flip = log_sigmoid_cols(
            f_cls.logits_ids(xs, [1 - s for s in styles]))
        _, l1m_gen = log_sigmoid_cols(f_cls.logits_ids(gxs, gtargets))
        loss = add(add(_mean_neg(ls_real), _mean_neg(l1m_flip)),
                   _mean_neg(l1m_gen))
        backward(loss)
        opt_cls.step()
        losses["cls"] = loss.item()
    if f_adv is not None:
        opt_adv.zero_grad()
        ls_real, _ = log_sigmoid_cols(f_adv.logits_ids(xs))
        _, l1m_gen = log_sigmoid_cols(f_adv.logits_ids(gxs))
        loss = add(_mean_neg(ls_real), _mean_neg(l1m_gen))
        backward(loss)
        opt_adv.step()
        losses["adv"] = loss.item()
    return losses


def pretrain_classifier(f_cls: StyleClassifier, pairs: list[tuple],
                        epochs: int = 3, lr: float = 1e-3,
                        batch_size: int = 64, seed: int = 0) -> None:
    """Fit the style classifier on labeled sentences before stage 1."""
    opt = Adam(f_cls.params(), lr=lr)
    rng = np.random.default_rng(seed)
    order = np.arange(len(pairs))
    for _ in range(epochs):
        rng.shuffle(order)
        for start in range(0, len(order), batch_size):
            chunk = [pairs[i] for i in order[start:start + batch_size]]
            xs = [x for x, _ in chunk]
            styles = [s for _, s in chunk]
            opt.zero_grad()
            ls, _ = log_sigmoid_cols(f_cls.logits_ids(xs, styles))
            _, l1m = log_sigmoid_cols(
                f_cls.logits_ids(xs, [1 - s for s in styles]))
            backward(add(_mean_neg(ls), _mean_neg(l1m)))
            opt.step()


def train_lm(lm: NeuralLM, sentences: list[list[int]], epochs: int = 2,
             lr: float = 1e-3, batch_size: int = 64, seed: int = 0) -> None:
    opt = Adam(lm.params(), lr=lr)
    rng = np.random.default_rng(seed)
    order = np.arange(len(sentences))
    for _ in range(epochs):
        rng.shuffle(order)
        for start in range(0, len(order), batch_size):
            chunk = [sentences[i] for i in order[start:start + batch_size]]
            opt.zero_grad()
            backward(lm.nll_loss(chunk))
            opt.step()


# ---------------------------------------------------------------------------
# objective assembly and checkpoint selection (pure functions)


def combine_losses(weights: dict[str, float], losses: dict[str, float]) -> float:
    """Scalar training objective: sum of weight * loss over shared keys."""
    return sum(weights[k] * losses[k] for k in losses if k in weights)


def select_stage1(history: list[CheckpointMeta]) -> CheckpointMeta:
    """Highest mean of dev accuracy (percent) and dev self-BLEU; earliest wins
    ties."""
    if not history:
        raise ValueError("select_stage1: empty metrics history")
    return max(history, key=lambda m: m.selection_mean())


def select_stage2(history: list[CheckpointMeta],
                  stage1: CheckpointMeta) -> tuple[CheckpointMeta, bool]:
    """Lowest dev perplexity among checkpoints that kept accuracy and
    self-BLEU at least at stage-1 level without a perplexity regression;
    falls back to the stage-1 checkpoint when none qualifies."""
    qualified = [m for m in history
                 if m.accuracy >= stage1.accuracy
                 and m.self_bleu >= stage1.self_bleu
                 and m.ppl <= stage1.ppl]
    if not qualified:
        fallback = replace(stage1, fallback=True)
        return fallback, True
    return min(qualified, key=lambda m: m.ppl), False


# ---------------------------------------------------------------------------
# training context


@dataclass
class TrainContext:
    vocab: Vocab
    corpus: StyledCorpus
    train_pairs: list          # (ids, style), generator training split
    dev_pairs: list            # (ids, style) with raw tokens alongside
    dev_tokens: list           # token lists aligned with dev_pairs
    eval_clf: EvalClassifier
    eval_lm: NeuralLM
    sim: SimModel | None


def build_context(corpus: StyledCorpus, cfg: TrainConfig,
                  sim: SimModel | None = None,
                  vocab: Vocab | None = None) -> TrainContext:
    """Deterministic shared state: vocabulary, the eval-LM holdout split,
    the external eval classifier, and the eval language model."""
    vocab = vocab or build_vocab(corpus)
    rng = np.random.default_rng(cfg.seed + 9001)
    train_pairs = []
    holdout_sents = []
    for style in (0, 1):
        sents = corpus.train[style]
        order = rng.permutation(len(sents))
        n_hold = int(len(sents) * cfg.holdout_frac)
        for pos, i in enumerate(order):
            ids = vocab.encode(sents[i])
            if pos < n_hold:
                holdout_sents.append(ids)
            else:
                train_pairs.append((ids, style))
    dev_pairs, dev_tokens = [], []
    for style in (0, 1):
        sents = corpus.dev[style]
        if cfg.dev_limit:
            sents = sents[:cfg.dev_limit]
        for sent in sents:
            dev_pairs.append((vocab.encode(sent), style))
            dev_tokens.append(list(sent))
    eval_clf = train_eval_classifier(corpus, seed=cfg.seed + 11)
    eval_lm = NeuralLM(vocab, seed=cfg.seed + 13)
    if holdout_sents:
        train_lm(eval_lm, holdout_sents, epochs=cfg.eval_lm_epochs,
                 batch_size=cfg.batch_size, seed=cfg.seed + 17)
        eval_lm.fingerprint = f"train-holdout-{cfg.holdout_frac}"
    return TrainContext(vocab=vocab, corpus=corpus, train_pairs=train_pairs,
                        dev_pairs=dev_pairs, dev_tokens=dev_tokens,
                        eval_clf=eval_clf, eval_lm=eval_lm, sim=sim)


def dev_eval(g: GeneratorModel, ctx: TrainContext,
             batch_size: int = 128) -> tuple[float, float, float]:
    """(accuracy, self-BLEU, perplexity) of opposite-style dev transfers."""
    outputs_tok, outputs_ids, targets = [], [], []
    for start in range(0, len(ctx.dev_pairs), batch_size):
        chunk = ctx.dev_pairs[start:start + batch_size]
        outs = greedy_decode_batch(g, [x for x, _ in chunk],
                                   [1 - s for _, s in chunk])
        for out, (_, style) in zip(outs, chunk):
            outputs_ids.append(out)
            outputs_tok.append(ctx.vocab.decode(out))
            targets.append(1 - style)
    acc = style_accuracy(ctx.eval_clf, outputs_tok, targets)
    bleu = corpus_bleu(outputs_tok, [[src] for src in ctx.dev_tokens])
    ppl = corpus_perplexity(ctx.eval_lm, outputs_ids)
    return acc, bleu, ppl


class MetricsHistory:
    """Line-delimited dev-eval records, written as they happen."""

    def __init__(self, path: str | None):
        self.path = path
        self.records: list[dict] = []
        if path:
            open(path, "w").close()

    def append(self, record: dict) -> None:
        self.records.append(record)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")


# ---------------------------------------------------------------------------
# stages


def _batches(pairs: list, batch_size: int, rng) -> list[list]:
    order = rng.permutation(len(pairs))
    return [[pairs[i] for i in order[s:s + batch_size]]
            for s in range(0, len(order), batch_size)]


def _sim_reward_fn(ctx: TrainContext, cfg: TrainConfig):
    from .rewards import bleu_reward, simile_reward

    vocab = ctx.vocab
    if cfg.content_reward == "bleu":
        return lambda x, y: bleu_reward(vocab.decode(x), vocab.decode(y))
    sim = ctx.sim
    alpha = cfg.weights.alpha
    return lambda x, y: simile_reward(sim, vocab.decode(x), vocab.decode(y),
                                      alpha=alpha, lp_variant=cfg.lp_variant)


def bootstrap_stage(g: GeneratorModel, f_cls: StyleClassifier,
                    corpus: StyledCorpus, cfg: TrainConfig,
                    ctx: TrainContext | None = None,
                    ckpt_dir: str | None = None,
                    history: MetricsHistory | None = None,
                    stats: dict | None = None,
                    pretrain: bool = True) -> CheckpointMeta:
    """Cycle + reconstruction + soft style reward; returns the checkpoint
    maximizing mean(dev accuracy, dev self-BLEU)."""
    cfg.validate()
    ctx = ctx or build_context(corpus, cfg)
    history = history or MetricsHistory(None)
    stats = stats if stats is not None else {}
    w = cfg.boot_weights
    if pretrain:
        pretrain_classifier(f_cls, ctx.train_pairs, epochs=cfg.clf_pretrain_epochs,
                            lr=cfg.lr_cls, batch_size=cfg.batch_size,
                            seed=cfg.seed + 23)
    opt_gen = Adam(g.params(), lr=cfg.lr_gen)
    opt_cls = Adam(f_cls.params(), lr=cfg.lr_cls)
    rng = np.random.default_rng(cfg.seed + 29)
    metas: list[CheckpointMeta] = []
    best: CheckpointMeta | None = None
    run_losses: dict[str, list] = {"rec": [], "cyc": [], "cls": []}
    batch_idx = 0
    diverged = False

    def eval_point(epoch: int) -> None:
        nonlocal best
        acc, bleu, ppl = dev_eval(g, ctx)
        meta = CheckpointMeta("bootstrap", epoch, batch_idx, acc, bleu, ppl)
        means = {k: (float(np.mean(v)) if v else 0.0)
                 for k, v in run_losses.items()}
        total = combine_losses(
            {"rec": w.rec, "cyc": w.cyc, "cls": w.cls}, means)
        history.append({
            "stage": "bootstrap", "epoch": epoch, "batch": batch_idx,
            "accuracy": acc, "self_bleu": bleu, "ppl": ppl,
            "loss_rec": means["rec"], "loss_cyc": means["cyc"],
            "loss_cls": means["cls"], "loss_total": total,
        })
        for v in run_losses.values():
            v.clear()
        if best is None or meta.selection_mean() > best.selection_mean():
            if ckpt_dir:
                meta.path = os.path.join(ckpt_dir, "stage1.ckpt")
                save_models(meta.path, {"generator": g, "classifier": f_cls},
                            stage="bootstrap")
            best = meta
        metas.append(meta)

    for epoch in range(cfg.epochs_stage1):
        for batch in _batches(ctx.train_pairs, cfg.batch_size, rng):
            xs = [x for x, _ in batch]
            styles = [s for _, s in batch]
            with ad.no_grad():
                decoded = greedy_decode_batch(g, xs, [1 - s for s in styles])
            decoded = _substitute_empty(decoded, stats)
            opt_gen.zero_grad()
            batch_losses = {}
            if w.rec > 0:
                loss = reconstruction_loss(g, xs, styles)
                backward(mul(loss, w.rec))
                batch_losses["rec"] = loss.item()
            if w.cyc > 0:
                loss = cycle_loss(g, xs, styles, stats=stats, decoded=decoded)
                backward(mul(loss, w.cyc))
                batch_losses["cyc"] = loss.item()
            if w.cls > 0:
                batch_losses["cls"] = soft_reward_step(
                    g, batch, f_cls, weight=w.cls, stats=stats)
            opt_gen.step()
            if cfg.clf_update == "adversarial":
                gen_batch = list(zip(decoded, [1 - s for s in styles]))
                update_discriminators(f_cls, None, batch, gen_batch,
                                      opt_cls=opt_cls, clf_update=cfg.clf_update)
            for k, v in batch_losses.items():
                run_losses[k].append(v)
            if not all(math.isfinite(v) for v in batch_losses.values()):
                stats["diverged"] = stats.get("diverged", 0) + 1
                diverged = True
                break
            batch_idx += 1
            if batch_idx % cfg.dev_eval_interval == 0:
                eval_point(epoch)
        if diverged:
            break
    if not metas or metas[-1].batch != batch_idx:
        eval_point(cfg.epochs_stage1 - 1)
    selected = select_stage1(metas)
    if diverged and best is not None:
        selected = best
    selected.path = best.path if best else ""
    return selected


def finetune_stage(g: GeneratorModel, f_cls: StyleClassifier,
                   f_adv: NaturalnessDiscriminator, lm: NeuralLM,
                   sim: SimModel | None, corpus: StyledCorpus,
                   cfg: TrainConfig, stage1: CheckpointMeta,
                   ctx: TrainContext | None = None,
                   ckpt_dir: str | None = None,
                   history: MetricsHistory | None = None,
                   stats: dict | None = None) -> CheckpointMeta:
    """Full reward objective; returns the lowest-dev-perplexity checkpoint
    among those matching stage-1 accuracy/BLEU without a perplexity
    regression, else the stage-1 checkpoint flagged as fallback."""
    cfg.validate()
    w = cfg.weights
    if lm is None and w.lang > 0:
        raise ConfigError("finetune_stage: fluency reward needs a fitted lm")
    if sim is None and w.sim > 0 and cfg.content_reward == "sim":
        raise ConfigError("finetune_stage: content reward needs a sim model")
    ctx = ctx or build_context(corpus, cfg, sim=sim)
    if ctx.sim is None:
        ctx.sim = sim
    history = history or MetricsHistory(None)
    stats = stats if stats is not None else {}
    opt_gen = Adam(g.params(), lr=cfg.lr_gen)
    opt_cls = Adam(f_cls.params(), lr=cfg.lr_cls)
    opt_adv = Adam(f_adv.params(), lr=cfg.lr_adv)
    rng = np.random.default_rng(cfg.seed + 31)
    content_fn = _sim_reward_fn(ctx, cfg) if w.sim > 0 else None
    fluency_fn = None
    if w.lang > 0:
        from .rewards import fluency_reward

        fluency_fn = lambda x, y: fluency_reward(lm, x, y)
    metas: list[CheckpointMeta] = []
    best: CheckpointMeta | None = None
    run_losses: dict[str, list] = {k: [] for k in
                                   ("rec", "sim", "lang", "cls", "adv")}
    batch_idx = 0
    diverged = False

    def qualifies(meta: CheckpointMeta) -> bool:
        return (meta.accuracy >= stage1.accuracy
                and meta.self_bleu >= stage1.self_bleu
                and meta.ppl <= stage1.ppl)

    def eval_point(epoch: int) -> None:
        nonlocal best
        acc, bleu, ppl = dev_eval(g, ctx)
        meta = CheckpointMeta("finetune", epoch, batch_idx, acc, bleu, ppl)
        means = {k: (float(np.mean(v)) if v else 0.0)
                 for k, v in run_losses.items()}
        total = combine_losses(
            {"rec": w.rec, "sim": w.sim, "lang": w.lang, "cls": w.cls,
             "adv": w.adv}, means)
        history.append({
            "stage": "finetune", "epoch": epoch, "batch": batch_idx,
            "accuracy": acc, "self_bleu": bleu, "ppl": ppl,
            "loss_rec": means["rec"], "loss_sim": means["sim"],
            "loss_lang": means["lang"], "loss_cls": means["cls"],
            "loss_adv": means["adv"], "loss_total": total,
        })
        for v in run_losses.values():
            v.clear()
        if qualifies(meta) and (best is None or meta.ppl < best.ppl):
            if ckpt_dir:
                meta.path = os.path.join(ckpt_dir, "stage2.ckpt")
                save_models(meta.path,
                            {"generator": g, "classifier": f_cls,
                             "discriminator": f_adv, "lm": lm},
                            stage="finetune")
            best = meta
        metas.append(meta)

    for epoch in range(cfg.epochs_stage2):
        for batch in _batches(ctx.train_pairs, cfg.batch_size, rng):
            xs = [x for x, _ in batch]
            styles = [s for _, s in batch]
            with ad.no_grad():
                decoded = greedy_decode_batch(g, xs, [1 - s for s in styles])
            decoded = _substitute_empty(decoded, stats)
            opt_gen.zero_grad()
            batch_losses = {}
            if w.rec > 0:
                loss = reconstruction_loss(g, xs, styles)
                backward(mul(loss, w.rec))
                batch_losses["rec"] = loss.item()
            if w.sim > 0:
                batch_losses["sim"] = reinforce_step(
                    g, batch, content_fn, weight=w.sim,
                    normalize=cfg.reward_norm == "all",
                    stats=stats, decoded=decoded)
            if w.lang > 0:
                batch_losses["lang"] = reinforce_step(
                    g, batch, fluency_fn, weight=w.lang,
                    normalize=cfg.reward_norm in ("lang", "all"),
                    stats=stats, decoded=decoded)
            if w.cls > 0:
                batch_losses["cls"] = soft_reward_step(
                    g, batch, f_cls, weight=w.cls, stats=stats)
            if w.adv > 0:
                batch_losses["adv"] = soft_reward_step(
                    g, batch, f_adv, weight=w.adv, stats=stats)
            opt_gen.step()
            gen_batch = list(zip(decoded, [1 - s for s in styles]))
            update_discriminators(f_cls, f_adv, batch, gen_batch,
                                  opt_cls=opt_cls, opt_adv=opt_adv,
                                  clf_update=cfg.clf_update)
            for k, v in batch_losses.items():
                run_losses[k].append(v)
            if not all(math.isfinite(v) for v in batch_losses.values()):
                stats["diverged"] = stats.get("diverged", 0) + 1
                diverged = True
                break
            batch_idx += 1
            if batch_idx % cfg.dev_eval_interval == 0:
                eval_point(epoch)
        if diverged:
            break
    if not metas or metas[-1].batch != batch_idx:
        eval_point(cfg.epochs_stage2 - 1)
    selected, fallback = select_stage2(metas, stage1)
    if fallback:
        return selected
    selected.path = best.path if best else ""
    return selected


# ---------------------------------------------------------------------------
# orchestration


def train_two_stages(corpus: StyledCorpus, cfg: TrainConfig,
                     sim: SimModel | None, ckpt_dir: str,
                     history_path: str | None = None,
                     stages: tuple = (1, 2), stats: dict | None = None,
                     vocab: Vocab | None = None,
                     model_kwargs: dict | None = None) -> dict:
    """Run the configured stages end to end; returns stage metas and stats."""
    cfg.validate()
    os.makedirs(ckpt_dir, exist_ok=True)
    ctx = build_context(corpus, cfg, sim=sim, vocab=vocab)
    history = MetricsHistory(history_path)
    stats = stats if stats is not None else {}
    mk = model_kwargs or {}
    g = GeneratorModel(ctx.vocab, seed=cfg.seed, **mk.get("generator", {}))
    f_cls = StyleClassifier(ctx.vocab, seed=cfg.seed + 1,
                            **mk.get("classifier", {}))
    result: dict = {"stats": stats, "vocab": ctx.vocab, "ctx": ctx,
                    "models": {"generator": g, "classifier": f_cls}}
    stage1_meta = None
    if 1 in stages:
        stage1_meta = bootstrap_stage(g, f_cls, corpus, cfg, ctx=ctx,
                                      ckpt_dir=ckpt_dir, history=history,
                                      stats=stats)
        result["stage1"] = stage1_meta
    if 2 in stages:
        if stage1_meta is None:
            raise ConfigError("stage 2 requires a stage-1 checkpoint")
        f_adv = NaturalnessDiscriminator(ctx.vocab, seed=cfg.seed + 2,
                                         **mk.get("discriminator", {}))
        lm = NeuralLM(ctx.vocab, seed=cfg.seed + 3, **mk.get("lm", {}))
        train_sents = [x for x, _ in ctx.train_pairs]
        train_lm(lm, train_sents, epochs=cfg.lm_epochs,
                 batch_size=cfg.batch_size, seed=cfg.seed + 37)
        lm.fingerprint = "train-split"
        result["models"].update({"discriminator": f_adv, "lm": lm})
        stage2_meta = finetune_stage(g, f_cls, f_adv, lm, sim, corpus, cfg,
                                     stage1_meta, ctx=ctx, ckpt_dir=ckpt_dir,
                                     history=history, stats=stats)
        result["stage2"] = stage2_meta
    return result
