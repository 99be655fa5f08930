"""Synthetic agglutinative languages with controllable tag sparsity.

A grammar is a set of parts of speech, each with stems and ordered
inflectional slots. A word is ``stem + suffix(slot_1) + ... + suffix(slot_k)``
with an optional derivation group appended, so composite tags are built
compositionally and unseen combinations of seen features are easy to
produce. Homographic suffixes (the same string for different values in
different slots) create ambiguous surfaces; agreement rules make some of
those ambiguities resolvable from the previous word.
"""
from __future__ import annotations

import itertools
import json
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import DB, Sentence, Token, composite_tag, corpus_stats, tag_counts
from .kernels import make_rng


@dataclass
class Slot:
    name: str
    values: dict  # feature value -> surface suffix
    weights: dict = field(default_factory=dict)

    def __post_init__(self):
        suffixes = list(self.values.values())
        if len(set(suffixes)) != len(suffixes):
            raise ValueError(f"slot {self.name}: suffixes must be distinct within a slot")
        if not self.values:
            raise ValueError(f"slot {self.name} has no values")


@dataclass
class Category:
    pos: str
    stems: list
    slots: list = field(default_factory=list)
    weight: float = 1.0


@dataclass
class Derivation:
    pos: str  # category it attaches to
    suffix: str
    features: tuple  # features of the derived group, e.g. ("Adj", "With")
    probability: float = 0.1


@dataclass
class Agreement:
    """After a word carrying ``trigger``, a word of ``pos`` takes the forced slot values.

    Forced values of the slots named in ``licensed`` never appear without
    the trigger.
    """
    trigger: str
    pos: str
    forced: dict
    licensed: tuple = ()
    follow_probability: float = 0.0  # chance the next word is forced to be ``pos``


@dataclass
class GrammarSpec:
    categories: list
    derivations: list = field(default_factory=list)
    agreements: list = field(default_factory=list)
    sentence_length: tuple = (3, 8)
    seed: int = 0

    def __post_init__(self):
        if not self.categories or not any(c.stems for c in self.categories):
            raise ValueError("grammar generates no words")

    def category(self, pos) -> Category:
        for c in self.categories:
            if c.pos == pos:
                return c
        raise KeyError(pos)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "GrammarSpec":
        cats = [Category(c["pos"], list(c["stems"]), [Slot(**s) for s in c.get("slots", [])],
                         c.get("weight", 1.0)) for c in d["categories"]]
        ders = [Derivation(x["pos"], x["suffix"], tuple(x["features"]), x.get("probability", 0.1))
                for x in d.get("derivations", [])]
        agr = [Agreement(a["trigger"], a["pos"], dict(a["forced"]), tuple(a.get("licensed", ())),
                         a.get("follow_probability", 0.0)) for a in d.get("agreements", [])]
        return cls(cats, ders, agr, tuple(d.get("sentence_length", (3, 8))), d.get("seed", 0))

    @classmethod
    def load(cls, path) -> "GrammarSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, ensure_ascii=False)


def _make_stems(rng, n, consonants="bdgklmnprstyz", vowels="aeiou", lengths=(3, 5)):
    stems, seen = [], set()
    while len(stems) < n:
        L = int(rng.integers(lengths[0], lengths[1] + 1))
        s = "".join((consonants if k % 2 == 0 else vowels)[int(rng.integers(0, len(consonants if k % 2 == 0 else vowels)))]
                    for k in range(L))
        if s not in seen:
            seen.add(s)
            stems.append(s)
    return stems


def default_grammar(seed: int = 0, n_nouns: int = 30, n_verbs: int = 20, n_adjs: int = 10,
                    sentence_length=(3, 8)) -> GrammarSpec:
    """Turkish-flavoured toy grammar.

    ``stem+i`` is ambiguous between Pnon+Acc and P3sg+Nom; the P3sg reading
    only occurs right after a genitive, as in "babamın masalı".
    """
    rng = make_rng(seed)
    stems = _make_stems(rng, n_nouns + n_verbs + n_adjs)
    noun = Category("Noun", stems[:n_nouns], [
        Slot("Number", {"A3sg": "", "A3pl": "lar"}, {"A3sg": 3, "A3pl": 1}),
        Slot("Poss", {"Pnon": "", "P1sg": "m", "P3sg": "i"}, {"Pnon": 4, "P1sg": 1}),
        Slot("Case", {"Nom": "", "Acc": "i", "Gen": "in", "Dat": "e", "Loc": "de"},
             {"Nom": 3, "Acc": 2.5, "Gen": 2.5, "Dat": 1, "Loc": 1}),
    ], weight=0.55)
    verb = Category("Verb", stems[n_nouns:n_nouns + n_verbs], [
        Slot("Polarity", {"Pos": "", "Neg": "me"}, {"Pos": 4, "Neg": 1}),
        Slot("Tense", {"Past": "di", "Fut": "ecek", "Prog": "iyor"}, {"Past": 5, "Fut": 2, "Prog": 3}),
        Slot("Person", {"A3sg": "", "A1sg": "m", "A3pl": "ler"}, {"A3sg": 5, "A1sg": 3, "A3pl": 2}),
    ], weight=0.3)
    adj = Category("Adj", stems[n_nouns + n_verbs:], [], weight=0.15)
    return GrammarSpec(
        categories=[noun, verb, adj],
        derivations=[Derivation("Noun", "li", ("Adj", "With"), 0.08)],
        agreements=[Agreement("Gen", "Noun", {"Poss": "P3sg", "Case": "Nom"}, licensed=("Poss",),
                              follow_probability=0.8)],
        sentence_length=tuple(sentence_length),
        seed=seed,
    )


def related_grammar(base: GrammarSpec, seed: int, stem_overlap: float = 0.5,
                    suffix_change: float = 0.3) -> GrammarSpec:
    """A sister language: same feature inventory, some new stems and re-spelled suffixes."""
    rng = make_rng(seed)
    cats = []
    for cat in base.categories:
        n = len(cat.stems)
        keep = int(round(stem_overlap * n))
        new = _make_stems(rng, n - keep, consonants="bcdfghjklmnprstvz", vowels="aeiouy")
        new = [s for s in new if s not in cat.stems] or new
        slots = []
        for slot in cat.slots:
            values = {}
            used = set()
            for v, suf in slot.values.items():
                if suf and rng.random() < suffix_change:
                    alt = suf[:-1] + "aeiouy"[int(rng.integers(0, 6))] if len(suf) > 1 else suf + "a"
                    suf = alt if alt not in slot.values.values() and alt not in used else suf
                used.add(suf)
                values[v] = suf
            slots.append(Slot(slot.name, values, dict(slot.weights)))
        cats.append(Category(cat.pos, list(cat.stems[:keep]) + list(new), slots, cat.weight))
    return GrammarSpec(cats, list(base.derivations), list(base.agreements), base.sentence_length, seed)


def _forced_values(spec: GrammarSpec):
    forced = defaultdict(set)
    for a in spec.agreements:
        for slot in a.licensed:
            forced[(a.pos, slot)].add(a.forced[slot])
    return forced


def enumerate_analyses(spec: GrammarSpec):
    """Every (surface, lemma, features) the grammar can spell, ignoring agreement."""
    for cat in spec.categories:
        value_lists = [list(s.values.items()) for s in cat.slots]
        ders = [None] + [d for d in spec.derivations if d.pos == cat.pos]
        for stem in cat.stems:
            for combo in itertools.product(*value_lists):
                base_feats = [cat.pos] + [v for v, _ in combo]
                base_surface = stem + "".join(suf for _, suf in combo)
                for d in ders:
                    if d is None:
                        yield base_surface, stem, tuple(base_feats)
                    else:
                        yield base_surface + d.suffix, stem, tuple(base_feats + [DB] + list(d.features))


def parse_index(spec: GrammarSpec) -> dict:
    index = defaultdict(list)
    for surface, lemma, feats in enumerate_analyses(spec):
        if (lemma, feats) not in index[surface]:
            index[surface].append((lemma, feats))
    return dict(index)


@dataclass
class SynthCorpus:
    sentences: list
    candidates: list  # per sentence, per token: list of (lemma, features)
    spec: GrammarSpec


def _choice(rng, items, weights):
    w = np.asarray(weights, dtype=float)
    return items[int(rng.choice(len(items), p=w / w.sum()))]


def generate(spec: GrammarSpec, n_sentences: int, seed: int | None = None) -> SynthCorpus:
    """Sample sentences plus, for every token, all grammar-consistent parses of its surface."""
    if not any(c.stems for c in spec.categories):
        raise ValueError("grammar generates no words")
    rng = make_rng(spec.seed if seed is None else seed)
    forced = _forced_values(spec)
    cats = [c for c in spec.categories if c.stems]
    index = parse_index(spec)
    lo, hi = spec.sentence_length
    sentences, candidates = [], []
    for _ in range(n_sentences):
        n = int(rng.integers(lo, hi + 1))
        tokens, prev = [], ()
        for _ in range(n):
            active = [a for a in spec.agreements if a.trigger in prev]
            follow = [a for a in active if rng.random() < a.follow_probability]
            if follow:
                cat = spec.category(follow[0].pos)
            else:
                cat = _choice(rng, cats, [c.weight for c in cats])
            rule = {}
            for a in active:
                if a.pos == cat.pos:
                    rule.update(a.forced)
            stem = cat.stems[int(rng.integers(0, len(cat.stems)))]
            feats, surface = [cat.pos], stem
            for slot in cat.slots:
                if slot.name in rule:
                    value = rule[slot.name]
                else:
                    banned = forced.get((cat.pos, slot.name), set())
                    options = [v for v in slot.values if v not in banned]
                    value = _choice(rng, options, [slot.weights.get(v, 1.0) for v in options])
                feats.append(value)
                surface += slot.values[value]
            for d in spec.derivations:
                if d.pos == cat.pos and not rule and rng.random() < d.probability:
                    feats += [DB] + list(d.features)
                    surface += d.suffix
                    break
            tokens.append(Token(surface, stem, tuple(feats)))
            prev = tuple(feats)
        sentences.append(Sentence(tokens))
        candidates.append([list(index[t.form]) for t in tokens])
    return SynthCorpus(sentences, candidates, spec)


def split_with_unseen_tags(sentences, target_unseen_pct: float, test_fraction: float = 0.3,
                           seed: int = 0, tolerance: float = 2.0):
    """Split so that roughly ``target_unseen_pct`` of test tokens carry tags absent from train.

    Rare tags are held out (every sentence containing one goes to test),
    then the test side is filled with sentences whose tags stay covered by
    the training side. Returns ``(train, test)`` with every sentence used
    exactly once.
    """
    if not 0.0 <= target_unseen_pct < 100.0:
        raise ValueError("target_unseen_pct must lie in [0, 100)")
    rng = make_rng(seed)
    n = len(sentences)
    order = [int(k) for k in rng.permutation(n)]
    sent_tags = [[composite_tag(t) for t in s] for s in sentences]
    total_tokens = sum(len(s) for s in sentences)
    want_test = test_fraction * total_tokens
    counts = tag_counts(sentences)
    first_seen = {}
    for rank, k in enumerate(order):
        for t in sent_tags[k]:
            first_seen.setdefault(t, rank)
    tags_by_rarity = sorted(counts, key=lambda t: (counts[t], first_seen[t]))

    def build(held_out):
        in_test = [any(t in held_out for t in sent_tags[k]) for k in range(n)]
        train_counts = Counter()
        for k in range(n):
            if not in_test[k]:
                train_counts.update(sent_tags[k])
        test_tokens = sum(len(sentences[k]) for k in range(n) if in_test[k])
        for k in order:
            if in_test[k] or test_tokens >= want_test:
                continue
            sc = Counter(sent_tags[k])
            if all(train_counts[t] > c for t, c in sc.items()):
                in_test[k] = True
                train_counts.subtract(sc)
                test_tokens += len(sentences[k])
        train = [sentences[k] for k in range(n) if not in_test[k]]
        test = [sentences[k] for k in range(n) if in_test[k]]
        return train, test

    held = set()
    best = None
    for tag in [None] + tags_by_rarity:
        if tag is not None:
            held.add(tag)
        train, test = build(held)
        if not train or not test:
            break
        got = corpus_stats(train, test).unseen_tag_pct
        err = abs(got - target_unseen_pct)
        if best is None or err < best[0]:
            best = (err, train, test)
        if err <= tolerance or got > target_unseen_pct + tolerance:
            break
    if best is None or best[0] > tolerance:
        raise ValueError(f"cannot reach {target_unseen_pct}% unseen tags "
                         f"(closest {'n/a' if best is None else round(best[0], 2)} points away)")
    return best[1], best[2]


def candidates_for(spec: GrammarSpec, sentences):
    index = parse_index(spec)
    return [[list(index.get(t.form, [(t.lemma, tuple(t.features))])) for t in s] for s in sentences]
