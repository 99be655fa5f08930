"""SGD training with dev-driven learning-rate decay, early stopping and transfer."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels as K
from .data import Vocabulary, composite_tag
from .model import Dropout, MorseConfig, MorseParams, forward_sentence_train, predict_sentence

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1.6
    decay_factor: float = 0.8
    decay_patience: int = 5
    stop_patience: int = 10
    dropout: float = 0.5
    max_epochs: int = 100
    seed: int = 1
    batch_size: int = 1
    clip_norm: float = 0.0
    target_acc: float | None = None  # stop once dev accuracy reaches this

    def __post_init__(self):
        if not 0.0 < self.decay_factor < 1.0:
            raise ValueError("decay_factor must lie in (0, 1)")
        if not 0 < self.decay_patience < self.stop_patience:
            raise ValueError("need 0 < decay_patience < stop_patience")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_acc: float
    lr: float

    def line(self) -> str:
        return f"{self.epoch}\t{self.train_loss:.6f}\t{self.dev_acc:.4f}\t{self.lr:.10g}"


@dataclass
class TrainState:
    lr: float
    initial_lr: float
    decay_factor: float = 0.8
    decay_patience: int = 5
    stop_patience: int = 10
    epoch: int = 0
    n_decays: int = 0
    best_acc: float = float("-inf")
    best_epoch: int = 0
    since_improvement: int = 0
    since_decay: int = 0
    stop: bool = False
    improved: bool = False
    history: list = field(default_factory=list)

    @classmethod
    def start(cls, cfg: TrainConfig) -> "TrainState":
        return cls(cfg.lr, cfg.lr, cfg.decay_factor, cfg.decay_patience, cfg.stop_patience)


def schedule_step(state: TrainState, dev_acc: float) -> TrainState:
    """Advance the schedule by one epoch's dev accuracy (mutates and returns ``state``).

    An improvement resets both counters. After ``decay_patience`` epochs
    without one the rate decays and only the decay counter resets; after
    ``stop_patience`` the stop flag is raised.
    """
    if not 0.0 <= dev_acc <= 100.0:
        raise ValueError(f"dev accuracy must be a percentage, got {dev_acc}")
    state.epoch += 1
    state.improved = dev_acc > state.best_acc
    if state.improved:
        state.best_acc = dev_acc
        state.best_epoch = state.epoch
        state.since_improvement = 0
        state.since_decay = 0
        return state
    state.since_improvement += 1
    state.since_decay += 1
    if state.since_decay >= state.decay_patience:
        state.n_decays += 1
        state.lr = state.initial_lr * state.decay_factor ** state.n_decays
        state.since_decay = 0
    if state.since_improvement >= state.stop_patience:
        state.stop = True
    return state


def _prediction_key(pred, mode: str):
    if mode == "joint":
        return pred.lemma, tuple(pred.features)
    return tuple(pred.features)


def _gold_key(tok, mode: str):
    if mode == "joint":
        return tok.lemma, tuple(tok.features)
    return tuple(tok.features)


def exact_match_accuracy(params: MorseParams, sentences) -> float:
    """Percentage of tokens whose full predicted output matches gold for the model's mode."""
    mode = params.config.mode
    right = total = 0
    for sent in sentences:
        for tok, pred in zip(sent, predict_sentence(sent, params)):
            right += _prediction_key(pred, mode) == _gold_key(tok, mode)
            total += 1
    return 100.0 * right / total if total else 0.0


@dataclass
class TrainResult:
    best: MorseParams
    final: MorseParams
    state: TrainState

    @property
    def history(self):
        return self.state.history


def train(params: MorseParams, train_corpus: Sequence, dev_corpus: Sequence, cfg: TrainConfig,
          dev_metric: Callable | None = None, on_epoch: Callable | None = None,
          stop_early: bool = True) -> TrainResult:
    """Train in place on ``params``; the returned ``best`` is a snapshot at the best dev epoch.

    ``dev_metric(params) -> accuracy`` overrides the default exact-match
    metric on ``dev_corpus``.
    """
    if not train_corpus or not dev_corpus:
        raise ValueError("training needs non-empty train and dev corpora")
    if params.config.mode == "whole_tag":
        unknown = {composite_tag(t) for s in train_corpus for t in s} - set(params.vocab.tags)
        if unknown:
            raise ValueError(f"training tags missing from the inventory: {sorted(unknown)[:5]}")
    rng = K.make_rng(cfg.seed)
    drop = Dropout(cfg.dropout, rng, params.dtype)
    metric = dev_metric or (lambda p: exact_match_accuracy(p, dev_corpus))
    state = TrainState.start(cfg)
    best = params.copy()
    for _ in range(cfg.max_epochs):
        order = rng.permutation(len(train_corpus))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            grads = {}
            for idx in batch:
                loss, g = forward_sentence_train(train_corpus[idx], params, drop)
                if not np.isfinite(loss):
                    raise K.NumericalError(
                        f"non-finite loss at epoch {state.epoch + 1}, sentence {idx}: {loss}")
                total += loss
                for name, v in g.items():
                    if name in grads:
                        grads[name] += v
                    else:
                        grads[name] = v
            if len(batch) > 1:
                for v in grads.values():
                    v /= len(batch)
            if cfg.clip_norm > 0:
                K.clip_global_norm(grads, cfg.clip_norm)
            K.sgd_step(params.tensors, grads, state.lr)
        lr_used = state.lr
        dev_acc = float(metric(params))
        schedule_step(state, dev_acc)
        if state.improved:
            best = params.copy()
        rec = EpochRecord(state.epoch, total / len(train_corpus), dev_acc, lr_used)
        state.history.append(rec)
        log.info("epoch %d loss %.4f dev %.2f lr %.4g", rec.epoch, rec.train_loss, dev_acc, lr_used)
        if on_epoch is not None:
            on_epoch(rec, state)
        if state.stop and stop_early:
            break
        if cfg.target_acc is not None and dev_acc >= cfg.target_acc:
            break
    return TrainResult(best, params, state)


def transfer_init(source: MorseParams, target_vocab: Vocabulary, config: MorseConfig | None, rng) -> MorseParams:
    """Initialize a model for ``target_vocab`` from a trained ``source``.

    Vocabulary-independent tensors (every LSTM block, W_d, W_db) are copied.
    Embedding rows and output-projection rows are copied for symbols present
    in both vocabularies; rows of new symbols are drawn fresh (Xavier for
    weights, zero for W_sb/tag_b). ``source`` is never modified.
    """
    config = config or source.config
    sc = source.config
    if (sc.hidden_size, sc.char_embed_size, sc.feat_embed_size) != (
            config.hidden_size, config.char_embed_size, config.feat_embed_size):
        raise ValueError("source and target models have incompatible H/A/B dimensions")
    fresh = MorseParams.init(config, target_vocab, rng)
    sv, tv = source.vocab, target_vocab

    def row_map(src_symbols, tgt_symbols):
        index = {s: k for k, s in enumerate(src_symbols)}
        return [(k, index[s]) for k, s in enumerate(tgt_symbols) if s in index]

    # the trailing row of char/feature tables is the UNK row, shared by construction
    maps = {
        "char_emb": row_map(list(sv.chars) + ["\0unk"], list(tv.chars) + ["\0unk"]),
        "feat_emb": row_map(list(sv.features) + ["\0unk"], list(tv.features) + ["\0unk"]),
        "dec_emb": None, "W_s": None, "W_sb": None,
        "tag_W": row_map(sv.tags, tv.tags), "tag_b": row_map(sv.tags, tv.tags),
    }
    out_map = row_map(
        [("c", s) for s in sv.chars] + [("f", s) for s in sv.features] + [("x", s) for s in range(4)],
        [("c", s) for s in tv.chars] + [("f", s) for s in tv.features] + [("x", s) for s in range(4)])
    for name in ("dec_emb", "W_s", "W_sb"):
        maps[name] = out_map
    for name, tensor in fresh.tensors.items():
        if name not in source.tensors:
            continue
        src = source.tensors[name]
        if name in maps:
            for t_row, s_row in maps[name]:
                tensor[t_row] = src[s_row]
        elif src.shape == tensor.shape:
            tensor[...] = src
        else:
            raise ValueError(f"tensor {name} has shape {src.shape} in the source, {tensor.shape} in the target")
    return fresh
