"""Numeric primitives: LSTM cell, softmax cross-entropy, dropout, init, SGD.

Everything here is a pure function of its arguments plus an explicit
``numpy.random.Generator``. Arrays follow the row-vector convention: a batch
of inputs is ``(batch, features)`` and a single input may be 1-D.

LSTM gate blocks are stacked in the order input, forget, cell, output, and
the forget-gate bias starts at 1.0. No peepholes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
from scipy.special import expit

GATE_ORDER = ("input", "forget", "cell", "output")
FORGET_BIAS = 1.0


class NumericalError(ArithmeticError):
    """Raised when a loss or activation stops being finite."""


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; identical streams for identical seeds on every platform."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def xavier_init(shape, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """Glorot-uniform init. 1-D tensors are biases and come back as zeros."""
    shape = tuple(int(s) for s in shape)
    if not shape:
        raise ValueError("xavier_init needs at least one dimension")
    if len(shape) == 1:
        return np.zeros(shape, dtype=dtype)
    fan_out, fan_in = shape[0], int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype, copy=False)


@dataclass
class LSTMCellParams:
    W: np.ndarray  # (4H, In)
    U: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    @property
    def hidden_size(self) -> int:
        return self.U.shape[1]

    @property
    def input_size(self) -> int:
        return self.W.shape[1]

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng, dtype=np.float64):
        W = xavier_init((4 * hidden_size, input_size), rng, dtype)
        U = xavier_init((4 * hidden_size, hidden_size), rng, dtype)
        b = xavier_init((4 * hidden_size,), rng, dtype)
        b[hidden_size:2 * hidden_size] = FORGET_BIAS
        return cls(W, U, b)

    @classmethod
    def zeros_like(cls, other: "LSTMCellParams") -> "LSTMCellParams":
        return cls(np.zeros_like(other.W), np.zeros_like(other.U), np.zeros_like(other.b))

    def items(self):
        return (("W", self.W), ("U", self.U), ("b", self.b))


@dataclass
class LSTMCache:
    params: LSTMCellParams
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray
    h: np.ndarray


def lstm_step(params: LSTMCellParams, x, h_prev, c_prev):
    """One LSTM step. Returns ``(h, c, cache)``; inputs may be 1-D or batched."""
    H = params.hidden_size
    if x.shape[-1] != params.input_size:
        raise ValueError(f"input has {x.shape[-1]} features, cell expects {params.input_size}")
    if h_prev.shape[-1] != H or c_prev.shape != h_prev.shape:
        raise ValueError(f"state shapes {h_prev.shape}/{c_prev.shape} do not match hidden size {H}")
    if x.shape[:-1] != h_prev.shape[:-1]:
        raise ValueError("input and state batch dimensions differ")
    z = x @ params.W.T + h_prev @ params.U.T + params.b
    i = expit(z[..., :H])
    f = expit(z[..., H:2 * H])
    g = np.tanh(z[..., 2 * H:3 * H])
    o = expit(z[..., 3 * H:])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, LSTMCache(params, x, h_prev, c_prev, i, f, g, o, c, tanh_c, h)


def lstm_backward(cache: LSTMCache, dh, dc):
    """Backprop one step. Returns ``(param_grads, dx, dh_prev, dc_prev)``."""
    if dh.shape != cache.h.shape or dc.shape != cache.c.shape:
        raise ValueError(
            f"upstream gradient shapes {dh.shape}/{dc.shape} do not match cache {cache.h.shape}")
    p = cache.params
    dc_total = dc + dh * cache.o * (1.0 - cache.tanh_c ** 2)
    d_o = dh * cache.tanh_c
    d_i = dc_total * cache.g
    d_g = dc_total * cache.i
    d_f = dc_total * cache.c_prev
    dz = np.concatenate([
        d_i * cache.i * (1.0 - cache.i),
        d_f * cache.f * (1.0 - cache.f),
        d_g * (1.0 - cache.g ** 2),
        d_o * cache.o * (1.0 - cache.o),
    ], axis=-1)
    dz2 = dz.reshape(-1, dz.shape[-1])
    grads = LSTMCellParams(
        dz2.T @ cache.x.reshape(-1, cache.x.shape[-1]),
        dz2.T @ cache.h_prev.reshape(-1, cache.h_prev.shape[-1]),
        dz2.sum(axis=0),
    )
    dx = dz @ p.W
    dh_prev = dz @ p.U
    dc_prev = dc_total * cache.f
    return grads, dx, dh_prev, dc_prev


def lstm_sequence(params: LSTMCellParams, xs, h0, c0, mask=None):
    """Unroll over ``xs`` of shape (T, batch, In).

    Where ``mask[t, b] == 0`` the state of row ``b`` is carried through step
    ``t`` unchanged, so ragged batches can be right-padded. Returns
    ``(hs, (h_T, c_T), caches)``.
    """
    h, c = h0, c0
    hs, caches = [], []
    for t in range(xs.shape[0]):
        h_new, c_new, cache = lstm_step(params, xs[t], h, c)
        if mask is not None:
            m = mask[t][:, None]
            h_new = m * h_new + (1.0 - m) * h
            c_new = m * c_new + (1.0 - m) * c
        h, c = h_new, c_new
        hs.append(h)
        caches.append(cache)
    if hs:
        hs = np.stack(hs)
    else:
        hs = np.zeros((0,) + h0.shape, dtype=h0.dtype)
    return hs, (h, c), caches


def lstm_sequence_backward(params: LSTMCellParams, caches, dhs, dh_last=None, dc_last=None, mask=None):
    """BPTT through :func:`lstm_sequence`.

    ``dhs`` holds the gradient w.r.t. every emitted hidden state (may be None),
    ``dh_last``/``dc_last`` the gradient w.r.t. the final state. Returns
    ``(grads, dxs, dh0, dc0)``.
    """
    T = len(caches)
    grads = LSTMCellParams.zeros_like(params)
    if T == 0:
        return grads, None, dh_last, dc_last
    shape = caches[0].h.shape
    dh = np.zeros(shape, dtype=params.W.dtype) if dh_last is None else dh_last.copy()
    dc = np.zeros(shape, dtype=params.W.dtype) if dc_last is None else dc_last.copy()
    dxs = np.zeros((T,) + caches[0].x.shape, dtype=params.W.dtype)
    for t in range(T - 1, -1, -1):
        if dhs is not None:
            dh = dh + dhs[t]
        if mask is not None:
            m = mask[t][:, None]
            dh_step, dc_step = m * dh, m * dc
            dh_keep, dc_keep = (1.0 - m) * dh, (1.0 - m) * dc
        else:
            dh_step, dc_step = dh, dc
            dh_keep = dc_keep = 0.0
        g, dx, dh_prev, dc_prev = lstm_backward(caches[t], dh_step, dc_step)
        grads.W += g.W
        grads.U += g.U
        grads.b += g.b
        dxs[t] = dx
        dh = dh_prev + dh_keep
        dc = dc_prev + dc_keep
    return grads, dxs, dh, dc


def log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_xent(logits, target):
    """Softmax cross-entropy with max-subtraction.

    ``logits`` is (..., K) and ``target`` an int (or int array matching the
    leading dims). Returns ``(loss, probs, dlogits)`` with
    ``dlogits = probs - onehot(target)``; ``loss`` has the leading shape.
    """
    logits = np.asarray(logits)
    target = np.asarray(target)
    K = logits.shape[-1]
    if target.shape != logits.shape[:-1]:
        raise ValueError(f"target shape {target.shape} does not match logits {logits.shape}")
    if np.any(target < 0) or np.any(target >= K):
        raise IndexError(f"target index out of range for {K} classes")
    logp = log_softmax(logits)
    probs = np.exp(logp)
    picked = np.take_along_axis(logp, target[..., None], axis=-1)[..., 0]
    dlogits = probs.copy()
    np.put_along_axis(dlogits, target[..., None],
                      np.take_along_axis(dlogits, target[..., None], axis=-1) - 1.0, axis=-1)
    loss = -picked
    if loss.ndim == 0:
        loss = float(loss)
    return loss, probs, dlogits


def dropout_mask(shape, rate: float, rng, training: bool, dtype=np.float64):
    """Inverted-dropout mask (already scaled), or None when it would be identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return None
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / (1.0 - rate)


def dropout(x, rate: float, rng, training: bool):
    mask = dropout_mask(x.shape, rate, rng, training, x.dtype)
    return x if mask is None else x * mask


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, dy):
    return dy * (x > 0)


def sgd_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float):
    """In-place ``p -= lr * g`` for every named tensor that has a gradient."""
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise ValueError(f"{name}: parameter {p.shape} vs gradient {g.shape}")
        p -= lr * g


def clip_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


@dataclass
class GradCheckReport:
    errors: dict
    tolerance: float
    n_checked: int

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def lines(self):
        for name, err in self.errors.items():
            yield f"{name}\t{err:.3e}"
        yield f"max_rel_error\t{self.max_error:.3e}"
        yield f"status\t{'pass' if self.passed else 'fail'}"


def grad_check(loss_fn: Callable, params: Mapping[str, np.ndarray], epsilon: float = 1e-5,
               tolerance: float = 1e-4, names=None, value_fn: Callable | None = None) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_fn(params)`` must return ``(loss, grads)`` and be deterministic.
    ``value_fn(params) -> loss`` may be supplied as a cheaper forward-only
    path for the perturbed evaluations.
    The error per tensor is ``|a - n| / (|a| + |n|)`` in the 2-norm, which
    stays meaningful when individual entries are near zero.
    """
    if value_fn is None:
        def value_fn(ps):
            return loss_fn(ps)[0]
    loss, grads = loss_fn(params)
    if not np.isfinite(loss):
        raise NumericalError(f"loss is not finite: {loss}")
    errors = {}
    count = 0
    for name in names or list(params):
        p = params[name]
        analytic = grads.get(name)
        analytic = np.zeros_like(p) if analytic is None else analytic
        numeric = np.zeros_like(p)
        flat = p.reshape(-1)
        nflat = numeric.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + epsilon
            lp = value_fn(params)
            flat[k] = orig - epsilon
            lm = value_fn(params)
            flat[k] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericalError(f"non-finite loss while perturbing {name}[{k}]")
            nflat[k] = (lp - lm) / (2.0 * epsilon)
        count += flat.size
        denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
        errors[name] = 0.0 if denom == 0 else float(np.linalg.norm(analytic - numeric) / denom)
    return GradCheckReport(errors, tolerance, count)
