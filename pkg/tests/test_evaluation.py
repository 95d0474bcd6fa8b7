import math

import numpy as np
import pytest

from restyle.data import StyledCorpus, SyntheticSpec, UNK, Vocab, gen_synthetic
from restyle.evaluation import (AuditReport, EvalClassifier, MetricsReport,
                                class_skew_audit, corpus_bleu,
                                corpus_perplexity, evaluate_all,
                                first_token_ablation, run_audit,
                                style_accuracy, train_eval_classifier)
from restyle.models import NeuralLM, lm_perplexity
from restyle.rewards import SimModel


# ---------------------------------------------------------------------------
# independent BLEU oracle (explicit nested loops, no shared code)


def oracle_bleu(hypotheses, references, max_n=4):
    match = [0.0] * max_n
    total = [0.0] * max_n
    c = r = 0
    for hyp, refs in zip(hypotheses, references):
        c += len(hyp)
        best = None
        for ref in refs:
            d = abs(len(ref) - len(hyp))
            if best is None or d < best[0] or (d == best[0] and len(ref) < best[1]):
                best = (d, len(ref))
        r += best[1]
        for n in range(1, max_n + 1):
            hyp_grams = [tuple(hyp[i:i + n]) for i in range(len(hyp) - n + 1)]
            for g in set(hyp_grams):
                hcount = hyp_grams.count(g)
                rmax = 0
                for ref in refs:
                    ref_grams = [tuple(ref[i:i + n])
                                 for i in range(len(ref) - n + 1)]
                    rmax = max(rmax, ref_grams.count(g))
                match[n - 1] += min(hcount, rmax)
                total[n - 1] += hcount
    used = [n for n in range(1, max_n + 1) if total[n - 1] > 0]
    if not used or c == 0:
        return 0.0
    needs_smoothing = any(match[n - 1] == 0 for n in used)
    precs = []
    for n in used:
        m, t = match[n - 1], total[n - 1]
        if needs_smoothing and n >= 2:
            m, t = m + 1, t + 1
        precs.append(m / t)
    if precs[0] == 0:
        return 0.0
    geo = math.exp(sum(math.log(p) for p in precs) / len(precs))
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return 100.0 * bp * geo


FIXTURE_PAIRS = [
    ("the movie was great overall", "the movie was bad overall"),
    ("i think the phone felt solid honestly", "i think the phone felt broken"),
    ("this room is perfect", "this room is perfect"),
    ("a b c d e f g", "a b x d e y g"),
    ("one two three", "four five six"),
    ("the the the the", "the the"),
    ("to be honest the game was dull", "honestly the game was dull overall"),
    ("small", "small"),
    ("x y", "y x"),
    ("repeat repeat repeat word", "repeat word repeat repeat"),
]


def test_corpus_bleu_matches_oracle_on_fixtures():
    for ref, hyp in FIXTURE_PAIRS:
        h = [hyp.split()]
        r = [[ref.split()]]
        assert corpus_bleu(h, r) == pytest.approx(oracle_bleu(h, r), abs=0.1), \
            (ref, hyp)
    # pooled corpus-level agreement too
    hyps = [h.split() for _, h in FIXTURE_PAIRS]
    refs = [[r.split()] for r, _ in FIXTURE_PAIRS]
    assert corpus_bleu(hyps, refs) == pytest.approx(oracle_bleu(hyps, refs),
                                                    abs=0.1)


def test_corpus_bleu_identity_is_100():
    corpus = [s.split() for s, _ in FIXTURE_PAIRS]
    assert corpus_bleu(corpus, [[s] for s in corpus]) == pytest.approx(100.0)


def test_corpus_bleu_disjoint_vocab_floor():
    hyps = [["aa", "bb", "cc"], ["dd", "ee"]]
    refs = [[["xx", "yy", "zz"]], [["ww", "vv"]]]
    assert corpus_bleu(hyps, refs) <= 1.0


def test_corpus_bleu_empty_hypothesis_zero_counts():
    hyps = [[], ["a", "b", "c"]]
    refs = [[["a", "b"]], [["a", "b", "c"]]]
    score = corpus_bleu(hyps, refs)
    assert 0.0 < score < 100.0


def test_corpus_bleu_multi_reference_clipping():
    hyps = [["the", "cat"]]
    refs = [[["the", "cat"], ["a", "cat"]]]
    assert corpus_bleu(hyps, refs) == pytest.approx(100.0)


def test_corpus_bleu_length_mismatch():
    with pytest.raises(ValueError):
        corpus_bleu([["a"]], [])


# ---------------------------------------------------------------------------
# eval classifier


@pytest.fixture(scope="module")
def separable_corpus():
    spec = SyntheticSpec(sizes=(400, 80, 80), seed=21)
    corpus, _ = gen_synthetic(spec)
    return corpus


@pytest.fixture(scope="module")
def eval_clf(separable_corpus):
    return train_eval_classifier(separable_corpus, seed=5)


def test_eval_classifier_separates_training_styles(separable_corpus, eval_clf):
    outputs, targets = [], []
    for style in (0, 1):
        for sent in separable_corpus.dev[style][:50]:
            outputs.append(list(sent))
            targets.append(style)
    assert style_accuracy(eval_clf, outputs, targets) >= 0.95


def test_eval_classifier_empty_features_bias_sign(eval_clf):
    pred = eval_clf.predict([])
    assert pred == int(eval_clf.bias[1] > eval_clf.bias[0])


def test_eval_classifier_deterministic_hashing():
    a = EvalClassifier().feature_ids(["alpha", "beta"])
    b = EvalClassifier().feature_ids(["alpha", "beta"])
    assert np.array_equal(a, b)
    assert len(a) == 3  # two unigrams + one bigram


def test_style_accuracy_empty_outputs():
    with pytest.raises(ValueError):
        style_accuracy(EvalClassifier(), [], [])


# ---------------------------------------------------------------------------
# perplexity


def test_corpus_perplexity_uniform():
    vocab50 = Vocab([f"t{i}" for i in range(44)], {})
    lm = NeuralLM(vocab50, embed_dim=8, hidden_dim=8, seed=1, zero_output=True)
    sents = [[6, 7], [8, 9, 10], [11]]
    assert corpus_perplexity(lm, sents) == pytest.approx(50.0, abs=1e-9)


def test_corpus_perplexity_single_sentence_matches_lm(separable_corpus):
    vocab = Vocab([f"t{i}" for i in range(20)], {})
    lm = NeuralLM(vocab, embed_dim=8, hidden_dim=8, seed=2)
    x = [6, 9, 11]
    assert corpus_perplexity(lm, [x]) == pytest.approx(
        lm_perplexity(lm, x), abs=1e-9)


def test_corpus_perplexity_reorder_invariant():
    vocab = Vocab([f"t{i}" for i in range(20)], {})
    lm = NeuralLM(vocab, embed_dim=8, hidden_dim=12, seed=3)
    sents = [[6, 7, 8], [9, 10], [11, 12, 13, 14], [15]]
    a = corpus_perplexity(lm, sents)
    b = corpus_perplexity(lm, sents[::-1])
    assert a == pytest.approx(b, rel=1e-12)


def test_shuffled_sentences_have_higher_perplexity():
    from restyle.data import build_vocab
    from restyle.training import train_lm

    spec = SyntheticSpec(sizes=(300, 50, 50), seed=31)
    corpus, _ = gen_synthetic(spec)
    vocab = build_vocab(corpus)
    lm = NeuralLM(vocab, embed_dim=24, hidden_dim=32, seed=4)
    train = [vocab.encode(s) for s in corpus.train[0] + corpus.train[1]]
    train_lm(lm, train, epochs=4, lr=3e-3, batch_size=32, seed=0)
    dev = [vocab.encode(s) for s in corpus.dev[0][:40] + corpus.dev[1][:40]]
    rng = np.random.default_rng(9)
    shuffled = [list(rng.permutation(s)) for s in dev]
    assert corpus_perplexity(lm, shuffled) > corpus_perplexity(lm, dev)


# ---------------------------------------------------------------------------
# audit probes


def test_first_token_ablation_boundary():
    clf = EvalClassifier()
    clf.bias[:] = [1.0, 0.0]  # everything classified as style 0
    before, after = first_token_ablation(clf, [["only"]], [0])
    assert before == 1.0 and after == 1.0  # singleton ablates to UNK, no crash


def test_first_token_ablation_is_pure_function():
    clf = EvalClassifier()
    outputs = [["a", "b"], ["c"]]
    r1 = first_token_ablation(clf, outputs, [0, 1])
    r2 = first_token_ablation(clf, outputs, [0, 1])
    assert r1 == r2 and outputs == [["a", "b"], ["c"]]


def _skew_corpus(token_counts):
    """Corpus with given {token: (c0, c1)} occurrence counts."""
    train0, train1 = [], []
    for tok, (c0, c1) in token_counts.items():
        train0.extend([[tok, "filler"]] * c0)
        train1.extend([[tok, "filler"]] * c1)
    empty = ([], [])
    return StyledCorpus((train0, train1), empty,
                        ([["filler", "x"]] * 10, [["filler", "y"]] * 10))


def test_class_skew_symmetry_and_balanced_never_flagged():
    corpus = _skew_corpus({"even": (50, 50)})
    outputs = [["even"]] * 300
    report = class_skew_audit(corpus, outputs, min_count=5, skew_threshold=0.9)
    (tok, c0, c1, skew) = [row for row in report.skew_table
                           if row[0] == "even"][0]
    assert skew == 0.5
    assert "even" not in report.flagged
    # symmetry under class relabel
    corpus2 = _skew_corpus({"even": (50, 50), "lop": (90, 10)})
    corpus3 = _skew_corpus({"even": (50, 50), "lop": (10, 90)})
    r2 = class_skew_audit(corpus2, [["lop"]], min_count=5)
    r3 = class_skew_audit(corpus3, [["lop"]], min_count=5)
    s2 = [row[3] for row in r2.skew_table if row[0] == "lop"][0]
    s3 = [row[3] for row in r3.skew_table if row[0] == "lop"][0]
    assert s2 == s3 == 0.9


def test_class_skew_planted_token_flagged():
    spec = SyntheticSpec(sizes=(2000, 100, 100), seed=13, skew_token="game",
                         skew_class=0, skew_p=0.99)
    corpus, _ = gen_synthetic(spec)
    # exploit outputs: every output mentions the planted token
    outputs = [["the", "game", "was", "fine"]] * 200
    sources = list(corpus.test[0]) + list(corpus.test[1])
    report = class_skew_audit(corpus, outputs, min_count=5,
                              skew_threshold=0.9, sources=sources)
    assert "game" in report.flagged


def test_class_skew_table_counts_semantics():
    # counts mirroring the published imbalance: 58 vs 7548 occurrences
    corpus = _skew_corpus({"game": (7548, 58)})
    outputs = [["game"]] * 291  # heavy over-production
    sources = [["x", "y"]] * 281 + [["game", "y"]] * 10
    report = class_skew_audit(corpus, outputs, min_count=5,
                              skew_threshold=0.99, sources=sources)
    row = [r for r in report.skew_table if r[0] == "game"][0]
    assert row[3] == pytest.approx(7548 / 7606, abs=1e-6)
    assert row[3] >= 0.99
    assert "game" in report.flagged
    # threshold above the skew stops the flag
    report2 = class_skew_audit(corpus, outputs, min_count=5,
                               skew_threshold=0.995, sources=sources)
    assert "game" not in report2.flagged


def test_class_skew_requires_overproduction():
    corpus = _skew_corpus({"game": (99, 1)})
    sources = [["game", "z"]] * 50
    outputs = [["game", "z"]] * 50  # same frequency as source: not flagged
    report = class_skew_audit(corpus, outputs, sources=sources)
    assert "game" not in report.flagged


def test_class_skew_audit_validation():
    corpus = _skew_corpus({"a": (5, 5)})
    with pytest.raises(ValueError):
        class_skew_audit(corpus, [], min_count=0)
    with pytest.raises(ValueError):
        class_skew_audit(corpus, [], skew_threshold=0.3)


def test_injection_rate_estimate():
    corpus = _skew_corpus({"great": (0, 100), "meh": (50, 50)})
    sources = [["the", "x"], ["the", "y"], ["the", "z"]]
    outputs = [["great", "the", "x"], ["the", "y"], ["meh", "the", "z"]]
    report = class_skew_audit(corpus, outputs, min_count=5,
                              skew_threshold=0.9, sources=sources)
    # only the first output injected a skewed token at position 0
    assert report.injection_rate == pytest.approx(1 / 3)


# ---------------------------------------------------------------------------
# reports


def test_metrics_report_roundtrip():
    report = MetricsReport(accuracy=0.9375, perplexity=13.25,
                           self_bleu=52.125, self_sim=0.875,
                           ref_bleu=None, ref_sim=None, sample_count=1000,
                           model_id="stage2.ckpt", config_id="abc")
    again = MetricsReport.from_kv_lines(report.to_kv_lines())
    assert again == report
    # csv has a header and one row
    lines = report.to_csv().strip().split("\n")
    assert len(lines) == 2 and lines[0].startswith("accuracy,")


def test_metrics_report_roundtrip_with_refs():
    report = MetricsReport(accuracy=0.5, perplexity=1.0, self_bleu=0.3,
                           self_sim=-0.25, ref_bleu=99.3, ref_sim=0.125,
                           sample_count=2)
    again = MetricsReport.from_kv_lines(report.to_kv_lines())
    assert again == report


def test_evaluate_all_copy_oracle(separable_corpus, eval_clf):
    from restyle.data import build_vocab

    vocab = build_vocab(separable_corpus)
    lm = NeuralLM(vocab, embed_dim=8, hidden_dim=8, seed=6, zero_output=True)
    table = {w: np.ones(3) for w in vocab.id_to_token}
    sim = SimModel(table, 3)
    report = evaluate_all(None, eval_clf, lm, sim, separable_corpus,
                          oracle="copy")
    assert report.self_bleu == pytest.approx(100.0)
    assert report.self_sim == pytest.approx(1.0, abs=1e-9)
    # copied outputs keep the source style: near-zero transfer accuracy
    assert report.accuracy <= 0.1
    assert report.ref_bleu is None


def test_run_audit_combines_probes(separable_corpus, eval_clf):
    outputs = [list(s) for s in separable_corpus.test[0][:20]]
    targets = [1] * len(outputs)
    sources = outputs
    report = run_audit(eval_clf, separable_corpus, outputs, targets,
                       sources=sources)
    assert report.acc_before is not None and report.acc_after is not None
    assert isinstance(report.skew_table, list)
    lines = report.to_kv_lines()
    assert any(line.startswith("acc_before") for line in lines)
    assert report.skew_csv().startswith("token,")
