"""The Morse network with hand-written backpropagation.

A sentence is processed in one batched pass: the word encoder runs over all
words at once (right-padded, masked), the bidirectional context encoder runs
over the word embeddings, the output encoder builds one window per word, and
the two-layer decoder is teacher-forced over every word in parallel.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import kernels as K
from .data import Sentence, Token, Vocabulary, composite_tag, decode_sequence, encode_target, split_tag

MODES = ("joint", "tag_only", "whole_tag")
CHECKPOINT_MAGIC = b"MORSECKP"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class MorseConfig:
    hidden_size: int = 512
    char_embed_size: int = 64
    feat_embed_size: int = 256
    mode: str = "joint"
    use_context: bool = True
    use_output_encoder: bool = True
    # carry the output-encoder state across the whole sentence instead of
    # restarting it on the two-word window
    output_state_carry: bool = False
    max_decode_len: int = 64
    dtype: str = "float64"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if min(self.hidden_size, self.char_embed_size, self.feat_embed_size) < 1:
            raise ValueError("hidden and embedding sizes must be >= 1")
        if self.max_decode_len < 2:
            raise ValueError("max_decode_len must be >= 2")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be float64 or float32, got {self.dtype!r}")
        if self.mode == "whole_tag":
            self.use_output_encoder = False

    @classmethod
    def from_dict(cls, d: dict) -> "MorseConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def tensor_shapes(config: MorseConfig, vocab: Vocabulary) -> dict:
    """Name -> shape for every trainable tensor; depends only on (config, vocab)."""
    H, A, B = config.hidden_size, config.char_embed_size, config.feat_embed_size
    shapes = {"char_emb": (vocab.n_chars, A)}

    def lstm(prefix, n_in):
        shapes[f"{prefix}.W"] = (4 * H, n_in)
        shapes[f"{prefix}.U"] = (4 * H, H)
        shapes[f"{prefix}.b"] = (4 * H,)

    lstm("word_lstm", A)
    if config.use_context:
        lstm("ctx_fwd", H)
        lstm("ctx_bwd", H)
    if config.use_output_encoder:
        shapes["feat_emb"] = (vocab.n_features, B)
        lstm("out_lstm", B)
    if config.mode == "whole_tag":
        if vocab.n_tags < 1:
            raise ValueError("whole_tag mode needs a non-empty tag inventory")
        shapes["tag_W"] = (vocab.n_tags, 2 * H)
        shapes["tag_b"] = (vocab.n_tags,)
    else:
        shapes["dec_emb"] = (vocab.n_output, B)
        lstm("dec1", B)
        lstm("dec2", H)
        shapes["W_d"] = (H, 2 * H)
        shapes["W_db"] = (H,)
        shapes["W_s"] = (vocab.n_output, H)
        shapes["W_sb"] = (vocab.n_output,)
    return shapes


def _is_lstm_bias(name: str) -> bool:
    return name.endswith(".b")


@dataclass
class MorseParams:
    config: MorseConfig
    vocab: Vocabulary
    tensors: dict = field(default_factory=dict)

    @classmethod
    def init(cls, config: MorseConfig, vocab: Vocabulary, rng) -> "MorseParams":
        dtype = np.dtype(config.dtype)
        H = config.hidden_size
        tensors = {}
        for name, shape in tensor_shapes(config, vocab).items():
            t = K.xavier_init(shape, rng, dtype)
            if _is_lstm_bias(name):
                t[H:2 * H] = K.FORGET_BIAS
            tensors[name] = t
        return cls(config, vocab, tensors)

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def lstm(self, prefix: str) -> K.LSTMCellParams:
        t = self.tensors
        return K.LSTMCellParams(t[f"{prefix}.W"], t[f"{prefix}.U"], t[f"{prefix}.b"])

    def copy(self) -> "MorseParams":
        return MorseParams(self.config, self.vocab, {k: v.copy() for k, v in self.tensors.items()})

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def n_parameters(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))


@dataclass
class WordPrediction:
    ids: tuple
    log_prob: float
    lemma: str = ""
    features: tuple = ()
    truncated: bool = False

    @property
    def analysis(self):
        return self.lemma, self.features


class Dropout:
    """Dropout masks drawn from one generator in a fixed call order."""

    def __init__(self, rate: float = 0.0, rng=None, dtype=np.float64):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate, self.rng, self.dtype = rate, rng, dtype

    @property
    def active(self):
        return self.rate > 0 and self.rng is not None

    def mask(self, shape):
        return K.dropout_mask(shape, self.rate, self.rng, self.active, self.dtype)


NO_DROPOUT = Dropout()


def _apply(x, m):
    return x if m is None else x * m


def _acc(grads: dict, name: str, value):
    if name in grads:
        grads[name] += value
    else:
        grads[name] = np.array(value, copy=True)


def _acc_lstm(grads: dict, prefix: str, g: K.LSTMCellParams):
    for key, value in g.items():
        _acc(grads, f"{prefix}.{key}", value)


def _acc_rows(grads: dict, name: str, shape, ids, values, dtype):
    if name not in grads:
        grads[name] = np.zeros(shape, dtype=dtype)
    np.add.at(grads[name], ids.reshape(-1), values.reshape(-1, shape[1]))


def _pad(seqs: Sequence[Sequence[int]], fill: int = 0):
    """Right-pad to a (T, batch) id matrix plus its 0/1 mask."""
    T = max((len(s) for s in seqs), default=0)
    ids = np.full((T, len(seqs)), fill, dtype=np.int64)
    mask = np.zeros((T, len(seqs)))
    for b, s in enumerate(seqs):
        ids[:len(s), b] = s
        mask[:len(s), b] = 1.0
    return ids, mask


# ---------------------------------------------------------------- encoders

def _word_encoder(params: MorseParams, forms, drop: Dropout):
    H, dt = params.config.hidden_size, params.dtype
    vocab = params.vocab
    ids, mask = _pad([[vocab.char_id(ch) for ch in form] for form in forms])
    mask = mask.astype(dt)
    x = params["char_emb"][ids]
    m_x = drop.mask(x.shape)
    zeros = np.zeros((len(forms), H), dtype=dt)
    _, (h_last, _), caches = K.lstm_sequence(params.lstm("word_lstm"), _apply(x, m_x), zeros, zeros, mask)
    m_e = drop.mask(h_last.shape)
    return _apply(h_last, m_e), (ids, mask, m_x, caches, m_e)


def _word_encoder_backward(params, cache, de, grads):
    ids, mask, m_x, caches, m_e = cache
    g, dxs, _, _ = K.lstm_sequence_backward(params.lstm("word_lstm"), caches, None,
                                            _apply(de, m_e), None, mask)
    _acc_lstm(grads, "word_lstm", g)
    _acc_rows(grads, "char_emb", params["char_emb"].shape, ids, _apply(dxs, m_x), params.dtype)


def _context_encoder(params: MorseParams, e, drop: Dropout):
    N, H = e.shape
    if not params.config.use_context:
        return np.zeros((N, 2 * H), dtype=e.dtype), None
    zeros = np.zeros((1, H), dtype=e.dtype)
    xs = e[:, None, :]
    hf, _, cf = K.lstm_sequence(params.lstm("ctx_fwd"), xs, zeros, zeros)
    hb, _, cb = K.lstm_sequence(params.lstm("ctx_bwd"), xs[::-1], zeros, zeros)
    c = np.concatenate([hf[:, 0], hb[::-1, 0]], axis=1)
    m_c = drop.mask(c.shape)
    return _apply(c, m_c), (cf, cb, m_c)


def _context_encoder_backward(params, cache, dc, grads):
    if cache is None:
        return None
    cf, cb, m_c = cache
    H = params.config.hidden_size
    dc = _apply(dc, m_c)
    gf, dxf, _, _ = K.lstm_sequence_backward(params.lstm("ctx_fwd"), cf, dc[:, None, :H])
    gb, dxb, _, _ = K.lstm_sequence_backward(params.lstm("ctx_bwd"), cb, dc[::-1, None, H:])
    _acc_lstm(grads, "ctx_fwd", gf)
    _acc_lstm(grads, "ctx_bwd", gb)
    return dxf[:, 0] + dxb[::-1, 0]


def output_windows(feature_lists: Sequence[Sequence[str]]) -> list:
    """Window for word i: features of words i-2 and i-1, concatenated."""
    return [list(feature_lists[i - 2] if i >= 2 else ()) + list(feature_lists[i - 1] if i >= 1 else ())
            for i in range(len(feature_lists))]


def _output_encoder(params: MorseParams, feature_lists, drop: Dropout):
    """Output embeddings for every word given the (gold) features of all words."""
    cfg, dt = params.config, params.dtype
    N, H = len(feature_lists), cfg.hidden_size
    if not cfg.use_output_encoder:
        return np.zeros((N, H), dtype=dt), None
    vocab = params.vocab
    lstm = params.lstm("out_lstm")
    if cfg.output_state_carry:
        seq = [vocab.feature_id(f) for feats in feature_lists[:-1] for f in feats]
        ends = np.cumsum([0] + [len(f) for f in feature_lists[:-1]])  # ends[i]: features before word i
        if not seq:
            return np.zeros((N, H), dtype=dt), None
        ids = np.array(seq, dtype=np.int64)[:, None]
        x = params["feat_emb"][ids]
        m_x = drop.mask(x.shape)
        zeros = np.zeros((1, H), dtype=dt)
        hs, _, caches = K.lstm_sequence(lstm, _apply(x, m_x), zeros, zeros)
        o = np.zeros((N, H), dtype=dt)
        for i in range(N):
            if ends[i] > 0:
                o[i] = hs[ends[i] - 1, 0]
        m_o = drop.mask(o.shape)
        return _apply(o, m_o), ("carry", ids, m_x, caches, m_o, ends)
    windows = output_windows(feature_lists)
    ids, mask = _pad([[vocab.feature_id(f) for f in w] for w in windows])
    if ids.shape[0] == 0:
        return np.zeros((N, H), dtype=dt), None
    mask = mask.astype(dt)
    x = params["feat_emb"][ids]
    m_x = drop.mask(x.shape)
    zeros = np.zeros((N, H), dtype=dt)
    _, (h_last, _), caches = K.lstm_sequence(lstm, _apply(x, m_x), zeros, zeros, mask)
    m_o = drop.mask(h_last.shape)
    return _apply(h_last, m_o), ("window", ids, m_x, caches, m_o, mask)


def _output_encoder_backward(params, cache, do, grads):
    if cache is None:
        return
    kind, ids, m_x, caches, m_o, extra = cache
    do = _apply(do, m_o)
    lstm = params.lstm("out_lstm")
    if kind == "carry":
        ends = extra
        dhs = np.zeros((len(caches), 1, do.shape[1]), dtype=do.dtype)
        for i in range(do.shape[0]):
            if ends[i] > 0:
                dhs[ends[i] - 1, 0] += do[i]
        g, dxs, _, _ = K.lstm_sequence_backward(lstm, caches, dhs)
    else:
        g, dxs, _, _ = K.lstm_sequence_backward(lstm, caches, None, do, None, extra)
    _acc_lstm(grads, "out_lstm", g)
    _acc_rows(grads, "feat_emb", params["feat_emb"].shape, ids, _apply(dxs, m_x), params.dtype)


def encode_words(sentence: Sentence, params: MorseParams, drop: Dropout = NO_DROPOUT):
    """Word embeddings e_i (N x H): final word-encoder state of each word."""
    return _word_encoder(params, sentence.forms, drop)[0]


def encode_context(e, params: MorseParams, drop: Dropout = NO_DROPOUT):
    """Context embeddings c_i (N x 2H): [forward state ; backward state]."""
    if len(e) == 0:
        raise ValueError("context encoder needs at least one word")
    return _context_encoder(params, np.asarray(e), drop)[0]


def encode_output(window: Sequence[str], params: MorseParams, drop: Dropout = NO_DROPOUT):
    """Output embedding for one window of feature tokens; zero for an empty window."""
    H, dt = params.config.hidden_size, params.dtype
    if not params.config.use_output_encoder or not window:
        return np.zeros(H, dtype=dt)
    ids = np.array([params.vocab.feature_id(f) for f in window], dtype=np.int64)[:, None]
    x = _apply(params["feat_emb"][ids], drop.mask((len(window), 1, params.config.feat_embed_size)))
    zeros = np.zeros((1, H), dtype=dt)
    _, (h, _), _ = K.lstm_sequence(params.lstm("out_lstm"), x, zeros, zeros)
    return _apply(h[0], drop.mask((H,)))


# ---------------------------------------------------------------- decoder

def _decoder(params: MorseParams, c, e, o, inputs, drop: Dropout):
    """Teacher-forced decoder over a batch of words. ``inputs`` is (K, batch)."""
    dt = params.dtype
    pre = c @ params["W_d"].T + params["W_db"]
    d1_0 = K.relu(pre)
    zeros = np.zeros_like(d1_0)
    x = params["dec_emb"][inputs]
    m_in = drop.mask(x.shape)
    hs1, _, caches1 = K.lstm_sequence(params.lstm("dec1"), _apply(x, m_in), d1_0, zeros)
    m1 = drop.mask(hs1.shape)
    hs1_d = _apply(hs1, m1)
    hs2, _, caches2 = K.lstm_sequence(params.lstm("dec2"), hs1_d, (e + o).astype(dt), zeros)
    m2 = drop.mask(hs2.shape)
    hs2_d = _apply(hs2, m2)
    logits = hs2_d @ params["W_s"].T + params["W_sb"]
    return logits, (c, pre, inputs, m_in, caches1, m1, caches2, m2, hs2_d)


def _decoder_backward(params, cache, dlogits, grads):
    """Returns gradients w.r.t. (c, e, o); e and o share one gradient."""
    c, pre, inputs, m_in, caches1, m1, caches2, m2, hs2_d = cache
    Y, H = params["W_s"].shape
    _acc(grads, "W_s", dlogits.reshape(-1, Y).T @ hs2_d.reshape(-1, H))
    _acc(grads, "W_sb", dlogits.reshape(-1, Y).sum(axis=0))
    dhs2 = _apply(dlogits @ params["W_s"], m2)
    g2, dxs2, dh0_2, _ = K.lstm_sequence_backward(params.lstm("dec2"), caches2, dhs2)
    _acc_lstm(grads, "dec2", g2)
    g1, dxs1, dh0_1, _ = K.lstm_sequence_backward(params.lstm("dec1"), caches1, _apply(dxs2, m1))
    _acc_lstm(grads, "dec1", g1)
    _acc_rows(grads, "dec_emb", params["dec_emb"].shape, inputs, _apply(dxs1, m_in), params.dtype)
    dpre = K.relu_backward(pre, dh0_1)
    _acc(grads, "W_d", dpre.T @ c)
    _acc(grads, "W_db", dpre.sum(axis=0))
    return dpre @ params["W_d"], dh0_2


def _teacher_inputs(targets, vocab):
    return [[vocab.bow] + list(t[:-1]) for t in targets]


def _sequence_losses(params, c, e, o, targets, drop: Dropout):
    """Per-position losses for a batch of target sequences (each ending in EOW)."""
    vocab = params.vocab
    inputs, _ = _pad(_teacher_inputs(targets, vocab), fill=vocab.eow)
    gold, tmask = _pad(targets, fill=vocab.eow)
    logits, cache = _decoder(params, c, e, o, inputs, drop)
    losses, probs, dlog = K.softmax_xent(logits, gold)
    return losses, probs, dlog, tmask, cache


def decode_word_train(c_i, e_i, o_i, gold: Sequence[int], params: MorseParams, drop: Dropout = NO_DROPOUT):
    """Mean teacher-forced cross-entropy of one word and the per-step dlogits."""
    if len(gold) == 0:
        raise ValueError("gold sequence is empty")
    losses, _, dlog, tmask, _ = _sequence_losses(
        params, c_i[None], e_i[None], o_i[None], [list(gold)], drop)
    n = len(gold)
    return float(losses[:, 0].sum() / n), dlog[:, 0] / n


def score_candidates(params: MorseParams, c_i, e_i, o_i, candidates: Sequence[Sequence[int]]):
    """Teacher-forced log-probabilities of several candidate sequences of one word."""
    if not candidates or any(len(s) == 0 for s in candidates):
        raise ValueError("candidates must be non-empty sequences")
    b = len(candidates)
    tile = lambda v: np.repeat(v[None], b, axis=0)  # noqa: E731
    losses, _, _, tmask, _ = _sequence_losses(params, tile(c_i), tile(e_i), tile(o_i),
                                              [list(s) for s in candidates], NO_DROPOUT)
    return [float(-(losses[:, k] * tmask[:, k]).sum()) for k in range(b)]


def score_candidate(c_i, e_i, o_i, candidate: Sequence[int], params: MorseParams) -> float:
    return score_candidates(params, c_i, e_i, o_i, [candidate])[0]


def _greedy_batch(params: MorseParams, c, e, o):
    cfg, vocab = params.config, params.vocab
    b = c.shape[0]
    h1 = K.relu(c @ params["W_d"].T + params["W_db"])
    c1 = np.zeros_like(h1)
    h2 = (e + o).astype(params.dtype)
    c2 = np.zeros_like(h2)
    prev = np.full(b, vocab.bow, dtype=np.int64)
    done = np.zeros(b, dtype=bool)
    seqs = [[] for _ in range(b)]
    logp_sum = np.zeros(b)
    dec1, dec2 = params.lstm("dec1"), params.lstm("dec2")
    for _ in range(cfg.max_decode_len):
        h1, c1, _ = K.lstm_step(dec1, params["dec_emb"][prev], h1, c1)
        h2, c2, _ = K.lstm_step(dec2, h1, h2, c2)
        logp = K.log_softmax(h2 @ params["W_s"].T + params["W_sb"])
        tok = np.argmax(logp, axis=1)  # first maximum wins ties
        for k in np.flatnonzero(~done):
            seqs[k].append(int(tok[k]))
            logp_sum[k] += logp[k, tok[k]]
        done |= tok == vocab.eow
        if done.all():
            break
        prev = tok
    out = []
    for k in range(b):
        lemma, feats = decode_sequence(seqs[k], vocab)
        out.append(WordPrediction(tuple(seqs[k]), float(logp_sum[k]), lemma, feats,
                                  truncated=not seqs[k] or seqs[k][-1] != vocab.eow))
    return out


def decode_word_greedy(c_i, e_i, o_i, params: MorseParams) -> WordPrediction:
    return _greedy_batch(params, c_i[None], e_i[None], o_i[None])[0]


def classify_whole_tag(c_i, params: MorseParams, gold_tag: str | None = None):
    """Whole-tag head: returns ``(tag_id, log_prob, loss)``; loss is None without a gold tag."""
    logits = c_i @ params["tag_W"].T + params["tag_b"]
    logp = K.log_softmax(logits)
    tag_id = int(np.argmax(logp))
    loss = None
    if gold_tag is not None:
        gid = params.vocab.tag_id(gold_tag)
        if gid is None:
            raise KeyError(f"tag {gold_tag!r} is not in the training inventory")
        loss = float(-logp[gid])
    return tag_id, float(logp[tag_id]), loss


# ---------------------------------------------------------------- sentences

def word_targets(tokens: Sequence[Token], params: MorseParams) -> list:
    include_lemma = params.config.mode == "joint"
    return [encode_target(t, params.vocab, include_lemma) for t in tokens]


def forward_sentence_train(sentence: Sentence, params: MorseParams, drop: Dropout = NO_DROPOUT,
                           backward: bool = True):
    """Mean per-word loss of a gold sentence and its gradients (None if ``backward`` is off)."""
    cfg = params.config
    N = len(sentence)
    e, wcache = _word_encoder(params, sentence.forms, drop)
    c, ccache = _context_encoder(params, e, drop)
    if cfg.mode == "whole_tag":
        gold = []
        for tok in sentence:
            gid = params.vocab.tag_id(composite_tag(tok))
            if gid is None:
                raise KeyError(f"tag {composite_tag(tok)!r} is not in the training inventory")
            gold.append(gid)
        logits = c @ params["tag_W"].T + params["tag_b"]
        losses, _, dlog = K.softmax_xent(logits, np.array(gold))
        loss = float(losses.mean())
        if not backward:
            return loss, None
        grads = {}
        dlog = dlog / N
        _acc(grads, "tag_W", dlog.T @ c)
        _acc(grads, "tag_b", dlog.sum(axis=0))
        dc = dlog @ params["tag_W"]
        de = np.zeros_like(e)
    else:
        o, ocache = _output_encoder(params, [t.features for t in sentence], drop)
        targets = word_targets(sentence.tokens, params)
        losses, _, dlog, tmask, dcache = _sequence_losses(params, c, e, o, targets, drop)
        lens = tmask.sum(axis=0)
        loss = float(((losses * tmask).sum(axis=0) / lens).mean())
        if not backward:
            return loss, None
        grads = {}
        dlog = dlog * (tmask / (lens[None, :] * N))[..., None]
        dc, d_eo = _decoder_backward(params, dcache, dlog, grads)
        de = d_eo.copy()
        _output_encoder_backward(params, ocache, d_eo, grads)
    dctx = _context_encoder_backward(params, ccache, dc, grads)
    if dctx is not None:
        de = de + dctx
    _word_encoder_backward(params, wcache, de, grads)
    return loss, grads


class _OutputTracker:
    """Incremental output embeddings while decoding left to right."""

    def __init__(self, params: MorseParams):
        self.params = params
        cfg = params.config
        self.enabled = cfg.use_output_encoder
        self.carry = cfg.output_state_carry
        H = cfg.hidden_size
        self.history = []
        self.h = np.zeros((1, H), dtype=params.dtype)
        self.c = np.zeros((1, H), dtype=params.dtype)

    def current(self):
        H = self.params.config.hidden_size
        if not self.enabled:
            return np.zeros(H, dtype=self.params.dtype)
        if self.carry:
            return self.h[0].copy()
        window = output_windows(self.history + [()])[-1]
        return encode_output(window, self.params)

    def push(self, features):
        self.history.append(tuple(features))
        if self.enabled and self.carry:
            lstm = self.params.lstm("out_lstm")
            for f in features:
                x = self.params["feat_emb"][self.params.vocab.feature_id(f)][None]
                self.h, self.c, _ = K.lstm_step(lstm, x, self.h, self.c)


@dataclass
class SentenceEncoding:
    """Encoder outputs for one sentence, reused by prediction and disambiguation."""
    params: MorseParams
    e: np.ndarray
    c: np.ndarray

    @classmethod
    def of(cls, sentence: Sentence, params: MorseParams):
        e = encode_words(sentence, params)
        return cls(params, e, encode_context(e, params))

    def tracker(self):
        return _OutputTracker(self.params)


def _whole_tag_prediction(params, c_i):
    tag_id, logp, _ = classify_whole_tag(c_i, params)
    return WordPrediction((tag_id,), logp, "", split_tag(params.vocab.tags[tag_id]))


def predict_sentence(sentence: Sentence, params: MorseParams, gold_window: bool = False) -> list:
    """Greedy analyses for every word, decoded left to right.

    The output encoder sees the features of the model's own previous
    predictions, or the gold features when ``gold_window`` is set.
    """
    cfg = params.config
    enc = SentenceEncoding.of(sentence, params)
    if cfg.mode == "whole_tag":
        return [_whole_tag_prediction(params, enc.c[i]) for i in range(len(sentence))]
    if not cfg.use_output_encoder:
        o = np.zeros_like(enc.e)
        return _greedy_batch(params, enc.c, enc.e, o)
    tracker = enc.tracker()
    preds = []
    for i, tok in enumerate(sentence):
        pred = decode_word_greedy(enc.c[i], enc.e[i], tracker.current(), params)
        preds.append(pred)
        tracker.push(tok.features if gold_window else pred.features)
    return preds


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(params: MorseParams, path) -> None:
    """Versioned header (config, vocab, vocab hash, tensor index) then raw little-endian tensors."""
    index, offset = [], 0
    blobs = []
    for name, t in params.tensors.items():
        le = t.astype(t.dtype.newbyteorder("<"), copy=False)
        blob = np.ascontiguousarray(le).tobytes()
        index.append({"name": name, "shape": list(t.shape), "dtype": le.dtype.str,
                      "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "vocab": params.vocab.to_dict(),
        "vocab_hash": params.vocab.digest(),
        "tensors": index,
    }
    hbytes = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(hbytes)))
        fh.write(hbytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path, expected_vocab: Vocabulary | None = None) -> MorseParams:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a Morse checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    version, hlen = struct.unpack_from("<IQ", raw, pos)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos += struct.calcsize("<IQ")
    header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    vocab = Vocabulary.from_dict(header["vocab"])
    if vocab.digest() != header["vocab_hash"]:
        raise CheckpointError(f"{path}: vocabulary hash does not match its contents")
    if expected_vocab is not None and expected_vocab.digest() != header["vocab_hash"]:
        raise CheckpointError(f"{path}: checkpoint vocabulary differs from the expected vocabulary")
    config = MorseConfig.from_dict(header["config"])
    shapes = tensor_shapes(config, vocab)
    tensors = {}
    for entry in header["tensors"]:
        name = entry["name"]
        if tuple(shapes.get(name, ())) != tuple(entry["shape"]):
            raise CheckpointError(f"{path}: tensor {name} has shape {entry['shape']}, "
                                  f"expected {shapes.get(name)}")
        start = pos + entry["offset"]
        arr = np.frombuffer(raw[start:start + entry["nbytes"]], dtype=np.dtype(entry["dtype"]))
        tensors[name] = arr.reshape(entry["shape"]).astype(config.dtype)
    missing = set(shapes) - set(tensors)
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)}")
    return MorseParams(config, vocab, {name: tensors[name] for name in shapes})
