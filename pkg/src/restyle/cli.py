"""Command-line front end: gen-data, train, transfer, evaluate, audit.

Exit codes: 0 success, 2 config/usage error, 3 data error, 4 training
divergence or stage-2 fallback.
"""

from __future__ import annotations

import argparse
import os
import sys

from .checkpoint import CheckpointError, load_models
from .config import (Config, load_config, model_kwargs, synthetic_spec,
                     train_config)
from .data import (DataError, build_vocab, gen_synthetic, load_corpus,
                   load_embeddings, normalize, write_corpus, write_embeddings)
from .evaluation import (MetricsReport, corpus_bleu, corpus_perplexity,
                         evaluate_all, run_audit, style_accuracy,
                         train_eval_classifier, UNK_TOKEN)
from .rewards import sim_score
from .training import ConfigError, build_context, train_two_stages

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


def _read_lines(path: str) -> list[list[str]]:
    """Outputs-file reader: blank lines stay as empty sentences so
    alignment with the test split is preserved."""
    with open(path, encoding="utf-8") as fh:
        return [normalize(line) for line in fh]


def _write_report(report_dir: str, name: str, lines: list[str],
                  config: Config) -> str:
    os.makedirs(report_dir, exist_ok=True)
    path = os.path.join(report_dir, name)
    body = lines + [""] + config.to_kv_lines(prefix="config.")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(body) + "\n")
    return path


def cmd_gen_data(config: Config) -> int:
    spec = synthetic_spec(config)
    spec.validate()  # reject bad specs before any write
    corpus, table = gen_synthetic(spec)
    os.makedirs(config.corpus_dir, exist_ok=True)
    write_corpus(corpus, config.corpus_dir)
    emb_dir = os.path.dirname(config.embedding_file)
    if emb_dir:
        os.makedirs(emb_dir, exist_ok=True)
    write_embeddings(config.embedding_file, table)
    for split, pair in corpus.counts().items():
        print(f"{split}: style0={pair[0]} style1={pair[1]}")
    print(f"embeddings: {len(table)} units -> {config.embedding_file}")
    return EXIT_OK


def _load_sim_if_needed(config: Config, cfg):
    needs_sim = cfg.weights.sim > 0 and cfg.content_reward == "sim"
    if not needs_sim:
        return None
    if not os.path.exists(config.embedding_file):
        raise ConfigError(
            f"content reward enabled but embedding file is missing: "
            f"{config.embedding_file}")
    return load_embeddings(config.embedding_file)


def cmd_train(config: Config, stage: str = "all") -> int:
    cfg = train_config(config)
    corpus = load_corpus(config.corpus_dir)
    sim = _load_sim_if_needed(config, cfg)
    vocab = build_vocab(corpus, max_size=config.vocab_max,
                        min_freq=config.vocab_min_freq)
    stages = {"1": (1,), "2": (1, 2), "all": (1, 2)}[stage]
    os.makedirs(config.report_dir, exist_ok=True)
    history_path = os.path.join(config.report_dir, "history.jsonl")
    result = train_two_stages(corpus, cfg, sim, config.checkpoint_dir,
                              history_path=history_path, stages=stages,
                              vocab=vocab, model_kwargs=model_kwargs(config))
    exit_code = EXIT_OK
    for key in ("stage1", "stage2"):
        meta = result.get(key)
        if meta is None:
            continue
        print(f"{key}: acc={meta.accuracy:.3f} self_bleu={meta.self_bleu:.1f} "
              f"ppl={meta.ppl:.1f} epoch={meta.epoch} batch={meta.batch} "
              f"fallback={int(meta.fallback)} path={meta.path}")
        lines = [f"stage = {meta.stage}", f"epoch = {meta.epoch}",
                 f"batch = {meta.batch}", f"accuracy = {meta.accuracy!r}",
                 f"self_bleu = {meta.self_bleu!r}", f"ppl = {meta.ppl!r}",
                 f"fallback = {int(meta.fallback)}", f"path = {meta.path}"]
        _write_report(config.report_dir, f"{key}_meta.txt", lines, config)
        if meta.fallback:
            exit_code = EXIT_DIVERGED
    if result["stats"].get("diverged"):
        exit_code = EXIT_DIVERGED
    return exit_code


def cmd_transfer(config: Config, checkpoint: str, input_path: str,
                 style: int, output_path: str) -> int:
    payload = load_models(checkpoint)
    gen = payload["models"].get("generator")
    if gen is None:
        raise ConfigError(f"{checkpoint}: no generator in checkpoint")
    from .models import greedy_decode_batch

    sentences = _read_lines(input_path)
    vocab = gen.vocab
    outputs = []
    for start in range(0, len(sentences), 128):
        chunk = sentences[start:start + 128]
        ids = [vocab.encode(s) for s in chunk]
        keep = [i for i, s in enumerate(ids) if s]
        decoded = {i: [] for i in range(len(chunk))}
        if keep:
            outs = greedy_decode_batch(gen, [ids[i] for i in keep],
                                       [style] * len(keep))
            for i, out in zip(keep, outs):
                decoded[i] = out
        outputs.extend(vocab.decode(decoded[i]) for i in range(len(chunk)))
    with open(output_path, "w", encoding="utf-8", newline="\n") as fh:
        for toks in outputs:
            fh.write(" ".join(toks) + "\n")
    print(f"transferred {len(outputs)} sentences -> {output_path}")
    return EXIT_OK


def _eval_harness(config: Config, corpus):
    cfg = train_config(config)
    vocab = build_vocab(corpus, max_size=config.vocab_max,
                        min_freq=config.vocab_min_freq)
    ctx = build_context(corpus, cfg, vocab=vocab)
    return ctx


def cmd_evaluate(config: Config, checkpoint: str | None = None,
                 outputs_path: str | None = None,
                 oracle: str | None = None) -> int:
    corpus = load_corpus(config.corpus_dir)
    sim = load_embeddings(config.embedding_file)
    ctx = _eval_harness(config, corpus)
    model_id = ""
    if outputs_path is not None:
        outputs = _read_lines(outputs_path)
        sources, targets = [], []
        for s in (0, 1):
            for sent in corpus.test[s]:
                sources.append(list(sent))
                targets.append(1 - s)
        if len(outputs) != len(sources):
            raise DataError(
                f"{outputs_path}: {len(outputs)} outputs but test split has "
                f"{len(sources)} sentences (order: all test.0 then test.1)")
        acc = style_accuracy(ctx.eval_clf, outputs, targets)
        out_ids = [ctx.vocab.encode(o) for o in outputs]
        import numpy as np

        report = MetricsReport(
            accuracy=acc,
            perplexity=corpus_perplexity(ctx.eval_lm, out_ids),
            self_bleu=corpus_bleu(outputs, [[s] for s in sources]),
            self_sim=float(np.mean([
                sim_score(sim, s, o if o else [UNK_TOKEN])
                for s, o in zip(sources, outputs)])),
            sample_count=len(outputs), model_id=os.path.basename(outputs_path),
            config_id="")
        if corpus.refs is not None:
            refs = list(corpus.refs[0]) + list(corpus.refs[1])
            report.ref_bleu = corpus_bleu(outputs, [[r] for r in refs])
            report.ref_sim = float(np.mean([
                sim_score(sim, r, o if o else [UNK_TOKEN])
                for r, o in zip(refs, outputs)]))
    else:
        gen = None
        if oracle is None:
            if checkpoint is None:
                raise ConfigError("evaluate needs --checkpoint, --outputs, "
                                  "or --oracle copy")
            payload = load_models(checkpoint)
            gen = payload["models"]["generator"]
            model_id = os.path.basename(checkpoint)
        report = evaluate_all(gen, ctx.eval_clf, ctx.eval_lm, sim, corpus,
                              refs=corpus.refs, oracle=oracle,
                              model_id=model_id or (oracle or ""))
    path = _write_report(config.report_dir, "metrics.txt",
                         report.to_kv_lines(), config)
    csv_path = os.path.join(config.report_dir, "metrics.csv")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_csv())
    for line in report.to_kv_lines():
        print(line)
    print(f"report -> {path}")
    return EXIT_OK


def cmd_audit(config: Config, checkpoint: str | None = None,
              outputs_path: str | None = None) -> int:
    corpus = load_corpus(config.corpus_dir)
    ctx = _eval_harness(config, corpus)
    sources, targets = [], []
    for s in (0, 1):
        for sent in corpus.test[s]:
            sources.append(list(sent))
            targets.append(1 - s)
    if outputs_path is not None:
        outputs = _read_lines(outputs_path)
        if len(outputs) != len(sources):
            raise DataError(
                f"{outputs_path}: {len(outputs)} outputs but test split has "
                f"{len(sources)} sentences")
    elif checkpoint is not None:
        payload = load_models(checkpoint)
        gen = payload["models"]["generator"]
        from .evaluation import transfer_corpus

        sources, outputs, targets = transfer_corpus(gen, corpus.test)
    else:
        raise ConfigError("audit needs --checkpoint or --outputs")
    report = run_audit(ctx.eval_clf, corpus, outputs, targets, sources=sources,
                       min_count=config.audit_min_count,
                       skew_threshold=config.audit_skew_threshold)
    path = _write_report(config.report_dir, "audit.txt",
                         report.to_kv_lines(), config)
    csv_path = os.path.join(config.report_dir, "audit_skew.csv")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.skew_csv())
    drop = (report.acc_before - report.acc_after) * 100.0
    print(f"ablation: acc {report.acc_before:.3f} -> {report.acc_after:.3f} "
          f"(drop {drop:.1f} points)")
    print(f"flagged tokens: {' '.join(report.flagged) or '(none)'}")
    print(f"injection rate: {report.injection_rate}")
    print(f"report -> {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="restyle",
        description="Reward-driven text style transfer with metric-gaming audits")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None,
                       help=f"config file (default: ${ENV_DEFAULT} if set)")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key")

    p = sub.add_parser("gen-data", help="write the synthetic corpus and "
                                        "toy embedding file")
    common(p)

    p = sub.add_parser("train", help="run the two-stage training procedure")
    common(p)
    p.add_argument("--stage", choices=["1", "2", "all"], default="all")

    p = sub.add_parser("transfer", help="greedy-transfer an input file")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--style", type=int, choices=[0, 1], required=True,
                   help="target style of the outputs")
    p.add_argument("--output", required=True)

    p = sub.add_parser("evaluate", help="metric report on the test split")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--outputs", help="score a ready outputs file instead of "
                                     "decoding a checkpoint")
    p.add_argument("--oracle", choices=["copy"],
                   help="replace the model with a copy oracle")

    p = sub.add_parser("audit", help="metric-gaming probes on outputs")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--outputs")
    return parser


ENV_DEFAULT = "RESTYLE_CONFIG"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config, args.overrides)
        if args.command == "gen-data":
            return cmd_gen_data(config)
        if args.command == "train":
            return cmd_train(config, stage=args.stage)
        if args.command == "transfer":
            return cmd_transfer(config, args.checkpoint, args.input,
                                args.style, args.output)
        if args.command == "evaluate":
            return cmd_evaluate(config, checkpoint=args.checkpoint,
                                outputs_path=args.outputs, oracle=args.oracle)
        if args.command == "audit":
            return cmd_audit(config, checkpoint=args.checkpoint,
                             outputs_path=args.outputs)
        parser.error(f"unknown command {args.command}")
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
