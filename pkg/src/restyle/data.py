"""Corpus loading, vocabulary, synthetic-corpus generation, embedding IO.

Corpus directory layout: {train,dev,test}.{0,1} text files (UTF-8, LF),
one sentence per line, plus optional refs.{0,1} aligned to the test split.
Normalization everywhere is lowercase + whitespace tokenization.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np


class DataError(Exception):
    """Raised for unreadable, malformed, or inconsistent data files."""


# fixed leading ids shared by every model vocabulary
PAD, BOS, EOS, UNK, STYLE0, STYLE1 = range(6)
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>", "<to0>", "<to1>")
STYLE_IDS = (STYLE0, STYLE1)


def normalize(line: str) -> list[str]:
    return line.lower().split()


class Vocab:
    """Frequency-ranked token ids with fixed leading specials."""

    def __init__(self, tokens: list[str], counts: dict[str, int]):
        self.id_to_token = list(SPECIAL_TOKENS) + tokens
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        self.counts = counts

    def __len__(self):
        return len(self.id_to_token)

    def encode(self, tokens: list[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]


def build_vocab(corpus: "StyledCorpus", max_size: int = 10000,
                min_freq: int = 1) -> Vocab:
    """Most-frequent training tokens; ties broken lexicographically."""
    if max_size < len(SPECIAL_TOKENS) + 1:
        raise DataError(f"max_size must be at least {len(SPECIAL_TOKENS) + 1}")
    counts: dict[str, int] = {}
    for style in (0, 1):
        for sent in corpus.train[style]:
            for tok in sent:
                counts[tok] = counts.get(tok, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = [t for t, c in ranked if c >= min_freq]
    keep = keep[: max_size - len(SPECIAL_TOKENS)]
    return Vocab(keep, counts)


@dataclass
class StyledCorpus:
    """Token-level sentences per style for each split; style in {0, 1}."""

    train: tuple[list, list]
    dev: tuple[list, list]
    test: tuple[list, list]
    refs: tuple[list, list] | None = None
    skipped_blank: int = 0

    def counts(self) -> dict:
        out = {}
        for split in ("train", "dev", "test"):
            pair = getattr(self, split)
            out[split] = (len(pair[0]), len(pair[1]))
        return out


def _read_sentences(path: str) -> tuple[list, int]:
    sentences, blanks = [], 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            toks = normalize(line)
            if toks:
                sentences.append(toks)
            else:
                blanks += 1
    return sentences, blanks


def load_corpus(directory: str) -> StyledCorpus:
    splits = {}
    skipped = 0
    for split in ("train", "dev", "test"):
        pair = []
        for style in (0, 1):
            path = os.path.join(directory, f"{split}.{style}")
            if not os.path.exists(path):
                raise DataError(f"missing corpus file: {path}")
            sents, blanks = _read_sentences(path)
            skipped += blanks
            pair.append(sents)
        splits[split] = tuple(pair)
    refs = None
    ref_paths = [os.path.join(directory, f"refs.{s}") for s in (0, 1)]
    if any(os.path.exists(p) for p in ref_paths):
        pair = []
        for style, path in enumerate(ref_paths):
            if not os.path.exists(path):
                raise DataError(f"missing reference file: {path}")
            sents, blanks = _read_sentences(path)
            skipped += blanks
            if len(sents) != len(splits["test"][style]):
                raise DataError(
                    f"reference file {path} has {len(sents)} sentences but "
                    f"test.{style} has {len(splits['test'][style])}")
            pair.append(sents)
        refs = tuple(pair)
    return StyledCorpus(splits["train"], splits["dev"], splits["test"], refs,
                        skipped_blank=skipped)


def write_corpus(corpus: StyledCorpus, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    for split in ("train", "dev", "test"):
        pair = getattr(corpus, split)
        for style in (0, 1):
            path = os.path.join(directory, f"{split}.{style}")
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                for sent in pair[style]:
                    fh.write(" ".join(sent) + "\n")
    if corpus.refs is not None:
        for style in (0, 1):
            path = os.path.join(directory, f"refs.{style}")
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                for sent in corpus.refs[style]:
                    fh.write(" ".join(sent) + "\n")


# ---------------------------------------------------------------------------
# synthetic corpus

NOUNS = [
    "movie", "film", "phone", "game", "laptop", "screen", "battery", "camera",
    "book", "novel", "story", "song", "album", "show", "series", "restaurant",
    "pizza", "burger", "coffee", "hotel", "room", "service", "staff", "keyboard",
]

# style 0 reads as negative, style 1 as positive
LEXICON0 = [
    "bad", "terrible", "awful", "horrible", "poor", "disappointing", "boring",
    "dreadful", "mediocre", "annoying", "ugly", "broken", "useless", "lousy",
    "painful", "unpleasant", "weak", "messy", "flawed", "forgettable",
]
LEXICON1 = [
    "great", "good", "amazing", "wonderful", "excellent", "fantastic", "lovely",
    "awesome", "brilliant", "perfect", "delightful", "superb", "charming",
    "impressive", "outstanding", "pleasant", "terrific", "refreshing", "solid",
    "enjoyable",
]
MILD0 = ["dull", "bland", "clumsy", "shaky", "noisy", "sloppy", "stale",
         "cramped", "faded", "grim"]
MILD1 = ["nice", "fine", "decent", "okay", "pleasing", "agreeable", "likable",
         "tidy", "smooth", "handy"]

VERBS = ["was", "is", "looked", "felt", "seemed"]
TAILS = ["overall", "honestly", "indeed", "somehow", "anyway"]

TEMPLATES = [
    "i think the {noun} {verb} {pol} {tail}",
    "i think this {noun} {verb} {pol}",
    "the {noun} {verb} {pol} {tail}",
    "to be honest the {noun} {verb} {pol}",
    "the {noun} {verb} really {pol} {tail}",
    "honestly the {noun} we got {verb} {pol}",
    "the {noun} and the {noun2} {verb} {pol}",
    "my {noun} {verb} {pol} and i mean it",
    "in my view the {noun} {verb} just {pol}",
]


@dataclass
class SyntheticSpec:
    """Recipe for a templated two-style corpus with optional planted biases."""

    templates: tuple[list, list] = (TEMPLATES, TEMPLATES)
    lexicons: tuple[list, list] = (LEXICON0, LEXICON1)
    mild_lexicons: tuple[list, list] = (MILD0, MILD1)
    mild_rate: float = 0.0          # share of sentences using a mild word
    mild_noise: float = 0.0         # share of mild words planted in the wrong class
    nouns: list = field(default_factory=lambda: list(NOUNS))
    verbs: list = field(default_factory=lambda: list(VERBS))
    tails: list = field(default_factory=lambda: list(TAILS))
    skew_token: str | None = None   # planted class-imbalanced topic noun
    skew_class: int = 0
    skew_p: float = 0.99
    skew_rate: float = 0.25         # how often the planted noun is used in its class
    sizes: tuple = (5000, 500, 500)
    seed: int = 0
    embed_dim: int = 16

    def validate(self) -> None:
        if set(self.lexicons[0]) & set(self.lexicons[1]):
            raise DataError("polarity lexicons must be disjoint across styles")
        if set(self.mild_lexicons[0]) & set(self.mild_lexicons[1]):
            raise DataError("mild lexicons must be disjoint across styles")
        if not 0.5 <= self.skew_p <= 1.0:
            raise DataError(f"skew probability must be in [0.5, 1], got {self.skew_p}")
        if self.skew_token is not None and self.skew_token not in self.nouns:
            raise DataError(f"skew token {self.skew_token!r} must be in the noun pool")
        if self.skew_class not in (0, 1):
            raise DataError("skew class must be 0 or 1")
        if any(n <= 0 for n in self.sizes) or len(self.sizes) != 3:
            raise DataError("sizes must be three positive split counts")


def _sample_sentence(spec: SyntheticSpec, style: int, rng) -> list[str]:
    template = spec.templates[style][rng.integers(len(spec.templates[style]))]
    use_mild = spec.mild_rate > 0 and rng.random() < spec.mild_rate
    pol_style = style
    if use_mild and spec.mild_noise > 0 and rng.random() < spec.mild_noise:
        pol_style = 1 - style
    lex = spec.mild_lexicons[pol_style] if use_mild else spec.lexicons[pol_style]
    pol = lex[rng.integers(len(lex))]

    def sample_noun():
        if spec.skew_token is not None:
            p, q = spec.skew_p, spec.skew_rate
            # off-class rate chosen so the planted token's class share equals p
            q_noun = q if style == spec.skew_class else q * (1.0 - p) / p
            if rng.random() < q_noun:
                return spec.skew_token
            others = [n for n in spec.nouns if n != spec.skew_token]
            return others[rng.integers(len(others))]
        return spec.nouns[rng.integers(len(spec.nouns))]

    fields = {"noun": sample_noun(), "pol": pol,
              "verb": spec.verbs[rng.integers(len(spec.verbs))],
              "tail": spec.tails[rng.integers(len(spec.tails))]}
    if "{noun2}" in template:
        fields["noun2"] = sample_noun()
    return template.format(**fields).split()


def _unit_vector(rng, dim: int) -> np.ndarray:
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def _orthogonalize(v: np.ndarray, bases: list[np.ndarray]) -> np.ndarray:
    for b in bases:
        v = v - (v @ b) * b
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def build_toy_embeddings(spec: SyntheticSpec) -> dict[str, np.ndarray]:
    """Word-unit embeddings where in-lexicon synonyms are near-identical and
    topic nouns are orthogonal to both polarity directions."""
    rng = np.random.default_rng(spec.seed + 104729)
    dim = spec.embed_dim
    base0 = _unit_vector(rng, dim)
    base1 = _orthogonalize(_unit_vector(rng, dim), [base0])
    table: dict[str, np.ndarray] = {}
    for style, base in ((0, base0), (1, base1)):
        for word in list(spec.lexicons[style]) + list(spec.mild_lexicons[style]):
            table[word] = base + rng.normal(scale=0.01, size=dim)
    for noun in spec.nouns:
        table[noun] = _orthogonalize(_unit_vector(rng, dim), [base0, base1])
    fillers = set(spec.verbs) | set(spec.tails)
    for style in (0, 1):
        for template in spec.templates[style]:
            for tok in template.split():
                if not (tok.startswith("{") and tok.endswith("}")):
                    fillers.add(tok)
    for word in sorted(fillers):
        if word not in table:
            table[word] = _unit_vector(rng, dim)
    chars = sorted({c for w in table for c in w})
    for c in chars:
        table[c] = 0.1 * _unit_vector(rng, dim)
    return table


def gen_synthetic(spec: SyntheticSpec) -> tuple[StyledCorpus, dict]:
    """Deterministic templated corpus plus its toy embedding table."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    splits = []
    for size in spec.sizes:
        pair = ([], [])
        for style in (0, 1):
            for _ in range(size):
                pair[style].append(_sample_sentence(spec, style, rng))
        splits.append(pair)
    corpus = StyledCorpus(*splits)
    return corpus, build_toy_embeddings(spec)


# ---------------------------------------------------------------------------
# embedding file IO


def write_embeddings(path: str, table: dict[str, np.ndarray]) -> None:
    units = list(table.keys())
    if not units:
        raise DataError("embedding table is empty")
    dim = len(next(iter(table.values())))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(units)} {dim}\n")
        for unit in units:
            vec = " ".join(repr(float(x)) for x in table[unit])
            fh.write(f"{unit} {vec}\n")


def load_embeddings(path: str):
    """Parse a '<N> <dim>' headed embedding file into a SimModel."""
    from .rewards import SimModel

    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DataError(f"{path}:1: header must be '<count> <dim>'")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise DataError(f"{path}:1: header must be two integers") from None
        table: dict[str, np.ndarray] = {}
        duplicates = 0
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != dim + 1:
                raise DataError(
                    f"{path}:{lineno}: expected 1 unit + {dim} values, "
                    f"got {len(parts)} fields")
            unit = parts[0]
            try:
                vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value") from None
            if unit in table:
                duplicates += 1  # last occurrence wins
            table[unit] = vec
    if len(table) + duplicates != count:
        raise DataError(f"{path}: header announced {count} units, "
                        f"found {len(table) + duplicates}")
    return SimModel(table, dim, duplicate_units=duplicates)
