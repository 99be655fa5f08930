"""Corpus readers, vocabularies, decoder targets and corpus statistics.

Two input formats are supported:

* CoNLL-U: FORM is the input; LEMMA, UPOS and FEATS are the analysis. The
  feature sequence is ``[UPOS] + FEATS.split("|")``.
* TrMor: one token per line, ``surface analysis`` separated by whitespace,
  with the analysis written as ``lemma+Feat+Feat^DB+Feat...``. Sentences are
  separated by blank lines or by ``<S>``/``</S>`` marker lines; ``<DOC>`` and
  ``<TITLE>`` style marker lines are ignored.
"""
from __future__ import annotations

import hashlib
import json
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

DB = "^DB"
BOW, EOW, UNK_CHAR, UNK_FEAT = "<bow>", "<eow>", "<unk-char>", "<unk-feat>"
CONTROL_TOKENS = (BOW, EOW, UNK_CHAR, UNK_FEAT)
# rendering of UNK_CHAR when a predicted sequence is turned back into text
UNK_CHAR_TEXT = "�"

_TRMOR_MARKERS = {"<S>", "</S>", "<DOC>", "</DOC>", "<TITLE>", "</TITLE>"}
_TRMOR_BOUNDARIES = {"<S>", "</S>"}


class CorpusFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Token:
    form: str
    lemma: str = ""
    features: tuple = ()

    def __post_init__(self):
        if not self.form:
            raise CorpusFormatError("token form is empty")
        object.__setattr__(self, "features", tuple(self.features))
        feats = self.features
        if feats and (feats[0] == DB or feats[-1] == DB):
            raise CorpusFormatError(f"{DB} cannot start or end a feature sequence: {feats}")

    @property
    def analysis(self) -> str:
        return format_analysis(self.lemma, self.features)


@dataclass(frozen=True)
class Sentence:
    tokens: tuple

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise CorpusFormatError("sentence has no tokens")

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]

    @property
    def forms(self):
        return [t.form for t in self.tokens]


def _nfc(s: str) -> str:
    return unicodedata.normalize("NFC", s)


def composite_tag(token_or_features) -> str:
    """Join the feature sequence into one tag, e.g. ``Noun+A3sg+Pnon+Nom^DB+Adj+With``."""
    feats = token_or_features.features if isinstance(token_or_features, Token) else token_or_features
    out = ""
    for k, f in enumerate(feats):
        if f == DB:
            out += DB
        elif k == 0 or feats[k - 1] == DB:
            out += f if k == 0 else "+" + f
        else:
            out += "+" + f
    return out


def split_tag(tag: str) -> tuple:
    """Inverse of :func:`composite_tag`."""
    if not tag:
        return ()
    feats = []
    for part in tag.split("+"):
        pieces = part.split(DB)
        for k, piece in enumerate(pieces):
            if k > 0:
                feats.append(DB)
            if piece:
                feats.append(piece)
    return tuple(feats)


def format_analysis(lemma: str, features: Sequence[str]) -> str:
    tag = composite_tag(tuple(features))
    return f"{lemma}+{tag}" if tag else lemma


def parse_analysis(analysis: str):
    """``masa+Noun+A3sg+Pnon+Nom^DB+Adj+With`` -> ``("masa", (Noun, ..., ^DB, Adj, With))``."""
    # a lemma may itself be "+" (punctuation); the separator is the first '+' after it
    start = 1 if analysis.startswith("+") else 0
    cut = analysis.find("+", start)
    if cut < 0:
        raise CorpusFormatError(f"analysis has no '+' separating lemma and features: {analysis!r}")
    lemma, tag = analysis[:cut], analysis[cut + 1:]
    if not lemma:
        raise CorpusFormatError(f"empty lemma in analysis {analysis!r}")
    feats = split_tag(tag)
    if not feats:
        raise CorpusFormatError(f"no features in analysis {analysis!r}")
    return lemma, feats


def parse_conllu(text: str) -> list:
    sentences, tokens = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            if tokens:
                sentences.append(Sentence(tokens))
                tokens = []
            continue
        if line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise CorpusFormatError(f"line {lineno}: expected 10 tab-separated columns, got {len(cols)}")
        tok_id = cols[0]
        if "-" in tok_id or "." in tok_id:
            continue
        form, lemma, upos, feats = _nfc(cols[1]), _nfc(cols[2]), cols[3], cols[5]
        features = [upos] + ([] if feats == "_" else feats.split("|"))
        tokens.append(Token(form, lemma, tuple(features)))
    if tokens:
        sentences.append(Sentence(tokens))
    if not sentences:
        raise CorpusFormatError("no sentences found in CoNLL-U input")
    return sentences


def write_conllu(sentences: Iterable[Sentence]) -> str:
    out = []
    for sent in sentences:
        for k, tok in enumerate(sent, 1):
            upos = tok.features[0] if tok.features else "_"
            feats = "|".join(tok.features[1:]) or "_"
            out.append("\t".join([str(k), tok.form, tok.lemma or "_", upos, "_", feats,
                                  "_", "_", "_", "_"]))
        out.append("")
    return "\n".join(out) + ("\n" if out else "")


def parse_trmor(text: str, allow_empty: bool = False) -> list:
    sentences, tokens = [], []

    def flush():
        if tokens:
            sentences.append(Sentence(list(tokens)))
            tokens.clear()

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            flush()
            continue
        parts = line.split(None, 1)
        if parts[0] in _TRMOR_MARKERS:
            if parts[0] in _TRMOR_BOUNDARIES:
                flush()
            continue
        if len(parts) != 2:
            raise CorpusFormatError(f"line {lineno}: expected 'surface analysis', got {line!r}")
        try:
            lemma, feats = parse_analysis(_nfc(parts[1].split()[0]))
        except CorpusFormatError as exc:
            raise CorpusFormatError(f"line {lineno}: {exc}") from None
        tokens.append(Token(_nfc(parts[0]), lemma, feats))
    flush()
    if not sentences and not allow_empty:
        raise CorpusFormatError("no sentences found in TrMor input")
    return sentences


def write_trmor(sentences: Iterable[Sentence], sep: str = "\t") -> str:
    out = []
    for sent in sentences:
        for tok in sent:
            out.append(f"{tok.form}{sep}{tok.analysis}")
        out.append("")
    return "\n".join(out) + ("\n" if out else "")


def parse_text(text: str) -> list:
    """Pre-tokenized plain text, one sentence per line."""
    return [Sentence([Token(_nfc(w)) for w in line.split()])
            for line in text.splitlines() if line.strip()]


def read_corpus(path, fmt: str) -> list:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if fmt == "conllu":
        return parse_conllu(text)
    if fmt == "trmor":
        return parse_trmor(text)
    if fmt == "text":
        return parse_text(text)
    raise ValueError(f"unknown corpus format {fmt!r}")


@dataclass(frozen=True)
class Vocabulary:
    """Character alphabet, feature set, composite-tag inventory.

    The output vocabulary lays out characters first, then features, then the
    control tokens, so ``output_index`` is dense and the two symbol classes
    are disjoint even when a feature string equals a character.
    """
    chars: tuple
    features: tuple
    tags: tuple = ()
    _char_index: dict = field(default=None, repr=False, compare=False)
    _feat_index: dict = field(default=None, repr=False, compare=False)
    _tag_index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "chars", tuple(self.chars))
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "tags", tuple(self.tags))
        if len(set(self.chars)) != len(self.chars) or len(set(self.features)) != len(self.features):
            raise ValueError("vocabulary symbols must be unique")
        object.__setattr__(self, "_char_index", {c: k for k, c in enumerate(self.chars)})
        object.__setattr__(self, "_feat_index", {f: k for k, f in enumerate(self.features)})
        object.__setattr__(self, "_tag_index", {t: k for k, t in enumerate(self.tags)})

    # sizes of the three embedding tables
    @property
    def n_chars(self) -> int:
        return len(self.chars) + 1  # + UNK_CHAR

    @property
    def n_features(self) -> int:
        return len(self.features) + 1  # + UNK_FEAT

    @property
    def n_output(self) -> int:
        return len(self.chars) + len(self.features) + len(CONTROL_TOKENS)

    @property
    def n_tags(self) -> int:
        return len(self.tags)

    @property
    def bow(self) -> int:
        return len(self.chars) + len(self.features)

    @property
    def eow(self) -> int:
        return self.bow + 1

    @property
    def unk_char(self) -> int:
        return self.bow + 2

    @property
    def unk_feat(self) -> int:
        return self.bow + 3

    def output_symbols(self) -> list:
        return list(self.chars) + list(self.features) + list(CONTROL_TOKENS)

    def char_id(self, ch: str) -> int:
        """Row in the character embedding table."""
        return self._char_index.get(ch, len(self.chars))

    def feature_id(self, feat: str) -> int:
        """Row in the output-encoder feature table."""
        return self._feat_index.get(feat, len(self.features))

    def output_char(self, ch: str) -> int:
        k = self._char_index.get(ch)
        return self.unk_char if k is None else k

    def output_feature(self, feat: str) -> int:
        k = self._feat_index.get(feat)
        return self.unk_feat if k is None else len(self.chars) + k

    def tag_id(self, tag: str):
        return self._tag_index.get(tag)

    def is_char(self, idx: int) -> bool:
        return idx < len(self.chars) or idx == self.unk_char

    def is_feature(self, idx: int) -> bool:
        return len(self.chars) <= idx < self.bow or idx == self.unk_feat

    def to_dict(self) -> dict:
        return {"chars": list(self.chars), "features": list(self.features), "tags": list(self.tags)}

    @classmethod
    def from_dict(cls, d) -> "Vocabulary":
        return cls(d["chars"], d["features"], d.get("tags", ()))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), ensure_ascii=False, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def build_vocab(train_sentences: Sequence[Sentence]) -> Vocabulary:
    if not train_sentences:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    chars, feats, tags = {}, {}, {}
    for sent in train_sentences:
        for tok in sent:
            for ch in tok.form + tok.lemma:
                chars.setdefault(ch, None)
            for f in tok.features:
                feats.setdefault(f, None)
            if tok.features:
                tags.setdefault(composite_tag(tok), None)
    return Vocabulary(tuple(chars), tuple(feats), tuple(tags))


def encode_target(token: Token, vocab: Vocabulary, include_lemma: bool = True) -> list:
    """Decoder target: lemma characters, then features, then EOW."""
    ids = [vocab.output_char(ch) for ch in token.lemma] if include_lemma else []
    ids.extend(vocab.output_feature(f) for f in token.features)
    ids.append(vocab.eow)
    return ids


def decode_sequence(ids: Sequence[int], vocab: Vocabulary):
    """Turn output ids back into ``(lemma, features)``.

    Character ids contribute to the lemma and feature ids to the feature
    list, each in emission order; decoding stops at the first EOW.
    """
    symbols = vocab.output_symbols()
    lemma, feats = [], []
    for idx in ids:
        if idx == vocab.eow:
            break
        if idx == vocab.unk_char:
            lemma.append(UNK_CHAR_TEXT)
        elif idx == vocab.unk_feat:
            feats.append(UNK_FEAT)
        elif idx < len(vocab.chars):
            lemma.append(symbols[idx])
        elif idx < vocab.bow:
            feats.append(symbols[idx])
    return "".join(lemma), tuple(feats)


@dataclass
class CorpusStats:
    distinct_tags: int
    distinct_features: int
    unseen_tag_pct: float
    rare_tag_pct: dict
    train_tokens: int
    test_tokens: int
    train_sentences: int
    test_sentences: int

    def rows(self):
        yield "train_sentences", self.train_sentences
        yield "train_tokens", self.train_tokens
        yield "test_sentences", self.test_sentences
        yield "test_tokens", self.test_tokens
        yield "distinct_tags", self.distinct_tags
        yield "distinct_features", self.distinct_features
        yield "unseen_tag_pct", f"{self.unseen_tag_pct:.2f}"
        for th, pct in sorted(self.rare_tag_pct.items()):
            yield f"rare_tag_pct_lt{th}", f"{pct:.2f}"

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["rare_tag_pct"] = {str(k): v for k, v in self.rare_tag_pct.items()}
        return d


def tag_counts(sentences) -> Counter:
    return Counter(composite_tag(tok) for sent in sentences for tok in sent)


def rare_tag_pct(train_counts: Counter, test, threshold: int) -> float:
    tags = [composite_tag(tok) for sent in test for tok in sent]
    if not tags:
        raise ValueError("empty test split")
    return 100.0 * sum(train_counts.get(t, 0) < threshold for t in tags) / len(tags)


def corpus_stats(train, test, rare_threshold=5) -> CorpusStats:
    if not train or not test:
        raise ValueError("corpus_stats needs non-empty train and test splits")
    counts = tag_counts(train)
    feats = {f for sent in train for tok in sent for f in tok.features}
    thresholds = [rare_threshold] if isinstance(rare_threshold, int) else list(rare_threshold)
    return CorpusStats(
        distinct_tags=len(counts),
        distinct_features=len(feats),
        unseen_tag_pct=rare_tag_pct(counts, test, 1),
        rare_tag_pct={th: rare_tag_pct(counts, test, th) for th in thresholds},
        train_tokens=sum(len(s) for s in train),
        test_tokens=sum(len(s) for s in test),
        train_sentences=len(train),
        test_sentences=len(test),
    )
