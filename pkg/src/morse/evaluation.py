"""Accuracy, feature F1, frequency buckets, ambiguity breakdown, disambiguation, seed aggregation.

An *analysis* is a ``(lemma, features)`` pair with ``features`` a tuple.
"""
from __future__ import annotations

import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .data import CorpusFormatError, Sentence, Token, composite_tag, encode_target, format_analysis, parse_analysis
from .model import MorseParams, SentenceEncoding, score_candidates

_DIGIT = re.compile(r"\d")
PROPER_NOUN = "Prop"


def mask_analysis(analysis):
    """Replace every digit of the lemma by '#' and drop ``Prop`` features."""
    lemma, feats = analysis
    return _DIGIT.sub("#", lemma), tuple(f for f in feats if f != PROPER_NOUN)


def token_analysis(tok: Token):
    return tok.lemma, tuple(tok.features)


def _matches(pred, gold, scope: str) -> bool:
    if scope == "lemma_tag":
        return pred[0] == gold[0] and tuple(pred[1]) == tuple(gold[1])
    if scope == "tag_only":
        return tuple(pred[1]) == tuple(gold[1])
    raise ValueError(f"unknown scope {scope!r}")


def exact_accuracy(preds, golds, scope: str = "lemma_tag") -> float:
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions for {len(golds)} gold analyses")
    if not golds:
        return 0.0
    return 100.0 * sum(_matches(p, g, scope) for p, g in zip(preds, golds)) / len(golds)


def feature_f1(preds, golds, average: str = "micro") -> float:
    """F1 over feature multisets, ignoring lemmas, as a percentage.

    ``micro`` pools true positives over tokens; ``macro`` averages the
    per-feature-type F1 scores.
    """
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions for {len(golds)} gold analyses")
    if average == "micro":
        tp = n_pred = n_gold = 0
        for p, g in zip(preds, golds):
            pc, gc = Counter(p[1]), Counter(g[1])
            tp += sum((pc & gc).values())
            n_pred += sum(pc.values())
            n_gold += sum(gc.values())
        return 100.0 * _f1(tp, n_pred, n_gold)
    if average == "macro":
        tp, n_pred, n_gold = Counter(), Counter(), Counter()
        for p, g in zip(preds, golds):
            pc, gc = Counter(p[1]), Counter(g[1])
            tp.update(pc & gc)
            n_pred.update(pc)
            n_gold.update(gc)
        labels = set(n_pred) | set(n_gold)
        if not labels:
            return 0.0
        return 100.0 * sum(_f1(tp[f], n_pred[f], n_gold[f]) for f in labels) / len(labels)
    raise ValueError(f"unknown average {average!r}")


def _f1(tp, n_pred, n_gold) -> float:
    if n_pred == 0 or n_gold == 0:
        return 0.0
    p, r = tp / n_pred, tp / n_gold
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


@dataclass
class Bucket:
    label: str
    low: int
    high: float  # exclusive; inf for the open bucket
    n_tokens: int
    tag_acc: float | None
    lemma_tag_acc: float | None


def bucket_edges(thresholds: Sequence[int]):
    th = list(thresholds)
    if any(t <= 1 for t in th) or any(b <= a for a, b in zip(th, th[1:])):
        raise ValueError(f"thresholds must be strictly increasing and > 1, got {th}")
    edges = [(0, 1, "count=0")]
    lo = 1
    for t in th:
        edges.append((lo, t, f"count<{t}"))
        lo = t
    edges.append((lo, math.inf, f"count>={lo}"))
    return edges


def bucket_report(train, golds: Sequence, preds: Sequence, kind: str = "tag", thresholds=(100,)):
    """Partition test tokens by how often their gold tag (or lemma) occurs in ``train``.

    ``golds``/``preds`` are aligned analyses. The middle buckets cover
    ``1 <= count < threshold``, so the buckets are disjoint.
    """
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions for {len(golds)} gold analyses")
    if kind == "tag":
        counts = Counter(composite_tag(tok) for s in train for tok in s)
        key = lambda a: composite_tag(a[1])  # noqa: E731
    elif kind == "lemma":
        counts = Counter(tok.lemma for s in train for tok in s)
        key = lambda a: a[0]  # noqa: E731
    else:
        raise ValueError(f"bucket kind must be 'tag' or 'lemma', got {kind!r}")
    table = []
    for lo, hi, label in bucket_edges(thresholds):
        idx = [k for k, g in enumerate(golds) if lo <= counts.get(key(g), 0) < hi]
        P = [preds[k] for k in idx]
        G = [golds[k] for k in idx]
        table.append(Bucket(label, lo, hi, len(idx),
                            exact_accuracy(P, G, "tag_only") if idx else None,
                            exact_accuracy(P, G, "lemma_tag") if idx else None))
    return table


@dataclass
class AmbiguityReport:
    ambiguous_acc: float | None
    unambiguous_acc: float | None
    total_acc: float
    n_ambiguous: int
    n_unambiguous: int


def ambiguity_flags(forms: Sequence[str], golds: Sequence, candidates=None, train=None):
    """True for ambiguous tokens: >= 2 candidates, or else a form with >= 2 gold analyses in train+test."""
    if candidates is not None:
        return [len(c) >= 2 for c in candidates]
    seen = defaultdict(set)
    for s in train or ():
        for tok in s:
            seen[tok.form].add(token_analysis(tok))
    for form, g in zip(forms, golds):
        seen[form].add((g[0], tuple(g[1])))
    return [len(seen[f]) >= 2 for f in forms]


def ambiguity_report(preds, golds, forms, candidates=None, train=None, scope: str = "lemma_tag"):
    if not (len(preds) == len(golds) == len(forms)):
        raise ValueError("predictions, gold analyses and forms must be aligned")
    flags = ambiguity_flags(forms, golds, candidates, train)
    amb = [k for k, f in enumerate(flags) if f]
    una = [k for k, f in enumerate(flags) if not f]

    def acc(idx):
        if not idx:
            return None
        return exact_accuracy([preds[k] for k in idx], [golds[k] for k in idx], scope)

    return AmbiguityReport(acc(amb), acc(una), exact_accuracy(preds, golds, scope), len(amb), len(una))


def disambiguate(params: MorseParams, sentence: Sentence, candidates: Sequence[Sequence]):
    """Pick, left to right, the candidate analysis the decoder scores highest.

    Chosen analyses feed the output encoder for later words; ties go to the
    first listed candidate.
    """
    if len(candidates) != len(sentence):
        raise ValueError("one candidate list per token is required")
    include_lemma = params.config.mode == "joint"
    if params.config.mode == "whole_tag":
        raise ValueError("disambiguation needs a sequence decoder")
    enc = SentenceEncoding.of(sentence, params)
    tracker = enc.tracker()
    chosen = []
    for i, (tok, cands) in enumerate(zip(sentence, candidates)):
        if not cands:
            raise ValueError(f"token {i} ({tok.form!r}) has no candidate analyses")
        if len(cands) == 1:
            best = cands[0]
        else:
            seqs = [encode_target(Token(tok.form, lemma, feats), params.vocab, include_lemma)
                    for lemma, feats in cands]
            scores = score_candidates(params, enc.c[i], enc.e[i], tracker.current(), seqs)
            best = cands[int(np.argmax(scores))]
        chosen.append((best[0], tuple(best[1])))
        tracker.push(best[1])
    return chosen


@dataclass
class RunAggregate:
    mean: float
    std: float
    n: int
    p_value: float | None = None
    other_mean: float | None = None
    test: str = "welch"


def aggregate_runs(values: Sequence[float], other: Sequence[float] | None = None) -> RunAggregate:
    """Mean and sample std over seeds, plus a two-sided Welch t-test against ``other``."""
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        raise ValueError("aggregate_runs needs at least two runs")
    agg = RunAggregate(float(x.mean()), float(x.std(ddof=1)), int(x.size))
    if other is not None:
        y = np.asarray(other, dtype=float)
        if y.size < 2:
            raise ValueError("the comparison system needs at least two runs")
        agg.other_mean = float(y.mean())
        if x.var(ddof=1) == 0 and y.var(ddof=1) == 0:
            agg.p_value = 1.0 if x.mean() == y.mean() else 0.0
        else:
            agg.p_value = float(stats.ttest_ind(x, y, equal_var=False).pvalue)
    return agg


@dataclass
class EvalReport:
    n_tokens: int
    lemma_tag_acc: float
    tag_acc: float
    feature_f1: float
    buckets: dict = field(default_factory=dict)
    ambiguity: AmbiguityReport | None = None

    def rows(self):
        yield "n_tokens", self.n_tokens
        yield "lemma_tag_acc", f"{self.lemma_tag_acc:.2f}"
        yield "tag_acc", f"{self.tag_acc:.2f}"
        yield "feature_f1", f"{self.feature_f1:.2f}"
        for kind, table in self.buckets.items():
            for b in table:
                yield f"{kind}.{b.label}.tokens", b.n_tokens
                yield f"{kind}.{b.label}.tag_acc", _fmt(b.tag_acc)
                yield f"{kind}.{b.label}.lemma_tag_acc", _fmt(b.lemma_tag_acc)
        if self.ambiguity is not None:
            a = self.ambiguity
            yield "ambiguous.tokens", a.n_ambiguous
            yield "ambiguous.acc", _fmt(a.ambiguous_acc)
            yield "unambiguous.tokens", a.n_unambiguous
            yield "unambiguous.acc", _fmt(a.unambiguous_acc)
            yield "total.acc", _fmt(a.total_acc)

    def to_dict(self) -> dict:
        d = {"n_tokens": self.n_tokens, "lemma_tag_acc": self.lemma_tag_acc,
             "tag_acc": self.tag_acc, "feature_f1": self.feature_f1, "buckets": {}}
        for kind, table in self.buckets.items():
            d["buckets"][kind] = [
                {"bucket": b.label, "tokens": b.n_tokens, "tag_acc": b.tag_acc,
                 "lemma_tag_acc": b.lemma_tag_acc} for b in table]
        if self.ambiguity is not None:
            a = self.ambiguity
            d["ambiguity"] = {"A": a.ambiguous_acc, "U": a.unambiguous_acc, "T": a.total_acc,
                              "n_ambiguous": a.n_ambiguous, "n_unambiguous": a.n_unambiguous}
        return d


def _fmt(x):
    return "-" if x is None else f"{x:.2f}"


def evaluate(pred_sentences, gold_sentences, train=None, candidates=None, mask: bool = True,
             tag_thresholds=(100,), lemma_thresholds=(5,)) -> EvalReport:
    """Full report for aligned predicted and gold sentences."""
    preds, golds, forms = [], [], []
    if len(pred_sentences) != len(gold_sentences):
        raise ValueError(f"{len(pred_sentences)} predicted sentences for {len(gold_sentences)} gold")
    for ps, gs in zip(pred_sentences, gold_sentences):
        if len(ps) != len(gs):
            raise ValueError("predicted and gold sentences are misaligned")
        for p, g in zip(ps, gs):
            if p.form != g.form:
                raise ValueError(f"form mismatch: {p.form!r} vs {g.form!r}")
            preds.append(token_analysis(p))
            golds.append(token_analysis(g))
            forms.append(g.form)
    if mask:
        preds = [mask_analysis(a) for a in preds]
        golds = [mask_analysis(a) for a in golds]
    report = EvalReport(len(golds), exact_accuracy(preds, golds, "lemma_tag"),
                        exact_accuracy(preds, golds, "tag_only"), feature_f1(preds, golds))
    if train is not None:
        report.buckets["tag"] = bucket_report(train, golds, preds, "tag", tag_thresholds)
        report.buckets["lemma"] = bucket_report(train, golds, preds, "lemma", lemma_thresholds)
    flat_cands = None
    if candidates is not None:
        flat_cands = [c for sent in candidates for c in sent]
    if candidates is not None or train is not None:
        report.ambiguity = ambiguity_report(preds, golds, forms, flat_cands, train)
    return report


# ---------------------------------------------------------------- files

def read_predictions(text: str) -> list:
    """``form<TAB>analysis`` lines, blank line between sentences; lemma '_' means none."""
    sentences, tokens = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            if tokens:
                sentences.append(Sentence(tokens))
                tokens = []
            continue
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise CorpusFormatError(f"line {lineno}: expected 'form analysis', got {line!r}")
        lemma, feats = _lenient_analysis(parts[1].strip())
        tokens.append(Token(parts[0], lemma, feats))
    if tokens:
        sentences.append(Sentence(tokens))
    return sentences


def _lenient_analysis(text: str):
    try:
        lemma, feats = parse_analysis(text)
    except CorpusFormatError:
        # a prediction may legitimately carry no features
        lemma, feats = text.rstrip("+"), ()
    return ("" if lemma == "_" else lemma), feats


def format_prediction(lemma: str, features) -> str:
    return format_analysis(lemma or "_", features)


def write_predictions(sentences) -> str:
    out = []
    for s in sentences:
        for tok in s:
            out.append(f"{tok.form}\t{format_prediction(tok.lemma, tok.features)}")
        out.append("")
    return "\n".join(out) + ("\n" if out else "")


def read_candidates(text: str):
    """``form<TAB>gold<TAB>cand1<TAB>cand2...``; returns (gold sentences, candidate lists)."""
    sentences, cands, tokens, tc = [], [], [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            if tokens:
                sentences.append(Sentence(tokens))
                cands.append(tc)
                tokens, tc = [], []
            continue
        cols = line.split("\t")
        if len(cols) < 3:
            raise CorpusFormatError(f"line {lineno}: need form, gold and at least one candidate")
        lemma, feats = parse_analysis(cols[1])
        tokens.append(Token(cols[0], lemma, feats))
        tc.append([parse_analysis(c) for c in cols[2:]])
    if tokens:
        sentences.append(Sentence(tokens))
        cands.append(tc)
    return sentences, cands


def write_candidates(sentences, candidates) -> str:
    out = []
    for s, cs in zip(sentences, candidates):
        for tok, c in zip(s, cs):
            out.append("\t".join([tok.form, tok.analysis] + [format_analysis(l, f) for l, f in c]))
        out.append("")
    return "\n".join(out) + ("\n" if out else "")
