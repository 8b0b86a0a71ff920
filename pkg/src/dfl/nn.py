"""Pre-LN transformer encoder with hand-written forward and backward passes.

Layer layout (per layer)::

    x = x + drop(attn(ln1(x)))
    x = x + drop(W2 gelu(W1 ln2(x) + b1) + b2)

Inputs are ``emb[token] * sqrt(d_model) + pos``, followed by dropout. Arrays
are batched as (B, n, d_model) with a boolean (B, n) mask; masked keys get
exactly zero attention weight and masked outputs receive no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import crf

LN_EPS = 1e-5
_GELU_C = np.sqrt(2.0 / np.pi)

LAYER_TENSORS = ("ln1_g", "ln1_b", "wq", "bq", "wk", "wv", "bv", "wo", "bo",
                 "ln2_g", "ln2_b", "w1", "b1", "w2", "b2")


@dataclass
class EncoderConfig:
    vocab_size: int
    num_layers: int = 2
    num_heads: int = 8
    d_model: int = 128
    d_ff: int | None = None
    dropout_rate: float = 0.1
    max_len: int = 256

    def __post_init__(self):
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model
        for name in ("vocab_size", "num_layers", "num_heads", "d_model", "d_ff", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d_model % self.num_heads:
            raise ValueError("d_model must be divisible by num_heads")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def d_head(self) -> int:
        return self.d_model // self.num_heads


def sinusoidal_table(max_len: int, d_model: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


@dataclass
class EncoderParams:
    config: EncoderConfig
    tensors: dict[str, np.ndarray]
    pos_table: np.ndarray = field(repr=False)

    @property
    def dtype(self):
        return self.tensors["emb"].dtype

    @classmethod
    def init(cls, config: EncoderConfig, seed: int | np.random.Generator = 0,
             dtype=np.float32) -> "EncoderParams":
        rng = np.random.default_rng(seed)
        d, f = config.d_model, config.d_ff

        def glorot(rows, cols):
            bound = np.sqrt(6.0 / (rows + cols))
            return rng.uniform(-bound, bound, size=(rows, cols)).astype(dtype)

        t = {"emb": glorot(config.vocab_size, d)}
        for l in range(config.num_layers):
            p = f"l{l}."
            t[p + "ln1_g"] = np.ones(d, dtype)
            t[p + "ln1_b"] = np.zeros(d, dtype)
            t[p + "wq"] = glorot(d, d)
            t[p + "bq"] = np.zeros(d, dtype)
            t[p + "wk"] = glorot(d, d)
            t[p + "wv"] = glorot(d, d)
            t[p + "bv"] = np.zeros(d, dtype)
            t[p + "wo"] = glorot(d, d)
            t[p + "bo"] = np.zeros(d, dtype)
            t[p + "ln2_g"] = np.ones(d, dtype)
            t[p + "ln2_b"] = np.zeros(d, dtype)
            t[p + "w1"] = glorot(d, f)
            t[p + "b1"] = np.zeros(f, dtype)
            t[p + "w2"] = glorot(f, d)
            t[p + "b2"] = np.zeros(d, dtype)
        table = sinusoidal_table(config.max_len, d).astype(dtype)
        return cls(config, t, table)

    def astype(self, dtype) -> "EncoderParams":
        return EncoderParams(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()},
                             self.pos_table.astype(dtype))


def _layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def _layer_norm_back(dy, g, cache):
    xhat, rstd = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(0)
    db = dy.reshape(-1, xhat.shape[-1]).sum(0)
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _gelu(x):
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    return 0.5 * x * (1.0 + t), t


def _gelu_back(dy, x, t):
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


def _dropout_mask(rng, shape, rate, dtype):
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / dtype.type(1.0 - rate)


def _split_heads(x, h):
    B, n, d = x.shape
    return x.reshape(B, n, h, d // h).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, n, h * dh)


def attention(params: EncoderParams, layer: int, a: np.ndarray, mask: np.ndarray):
    """Multi-head self-attention sublayer on already-normalised input ``a``.

    Returns the sublayer output, the attention weights (B, h, n, n) and a cache.
    """
    t, cfg = params.tensors, params.config
    p = f"l{layer}."
    h = cfg.num_heads
    Q = _split_heads(a @ t[p + "wq"] + t[p + "bq"], h)
    K = _split_heads(a @ t[p + "wk"], h)
    V = _split_heads(a @ t[p + "wv"] + t[p + "bv"], h)
    scale = a.dtype.type(1.0 / np.sqrt(cfg.d_head))
    S = (Q @ K.transpose(0, 1, 3, 2)) * scale
    S = np.where(mask[:, None, None, :], S, -np.inf)
    S = S - S.max(-1, keepdims=True)
    P = np.exp(S)
    P /= P.sum(-1, keepdims=True)
    C = _merge_heads(P @ V)
    out = C @ t[p + "wo"] + t[p + "bo"]
    return out, P, (a, Q, K, V, P, C, scale)


def _attention_back(params, layer, dout, cache, grads):
    t, cfg = params.tensors, params.config
    p = f"l{layer}."
    a, Q, K, V, P, C, scale = cache
    d = cfg.d_model
    grads[p + "wo"] = C.reshape(-1, d).T @ dout.reshape(-1, d)
    grads[p + "bo"] = dout.reshape(-1, d).sum(0)
    dC = _split_heads(dout @ t[p + "wo"].T, cfg.num_heads)
    dP = dC @ V.transpose(0, 1, 3, 2)
    dV = P.transpose(0, 1, 3, 2) @ dC
    dS = P * (dP - (dP * P).sum(-1, keepdims=True)) * scale
    dQ = dS @ K
    dK = dS.transpose(0, 1, 3, 2) @ Q
    a2 = a.reshape(-1, d)
    da = np.zeros_like(a)
    for name, dX, bias in (("q", dQ, "bq"), ("k", dK, None), ("v", dV, "bv")):
        dX = _merge_heads(dX)
        grads[p + "w" + name] = a2.T @ dX.reshape(-1, d)
        if bias:
            grads[p + bias] = dX.reshape(-1, d).sum(0)
        da += dX @ t[p + "w" + name].T
    return da


@dataclass
class ForwardCache:
    tokens: np.ndarray
    mask: np.ndarray
    drop0: np.ndarray | None
    layers: list = field(default_factory=list)


def encoder_forward(params: EncoderParams, tokens, mask=None, train_mode: bool = False,
                    rng: np.random.Generator | None = None):
    """Contextual representations H (B, n, d_model) and the cache for backprop.

    ``tokens`` may be (n,) for a single sentence, in which case H is (n, d_model).
    Dropout only runs when ``train_mode`` is set; ``rng`` is ignored otherwise.
    """
    cfg, t = params.config, params.tensors
    tokens = np.asarray(tokens)
    single = tokens.ndim == 1
    if single:
        tokens = tokens[None]
    mask = np.ones(tokens.shape, bool) if mask is None else np.asarray(mask, bool).reshape(tokens.shape)
    B, n = tokens.shape
    if n > cfg.max_len:
        raise ValueError(f"sequence length {n} exceeds max_len {cfg.max_len}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab_size):
        raise IndexError("token index out of range")
    dt = params.dtype
    rate = cfg.dropout_rate if train_mode else 0.0
    if rate > 0 and rng is None:
        raise ValueError("train_mode with dropout needs an rng")

    x = t["emb"][tokens] * dt.type(np.sqrt(cfg.d_model)) + params.pos_table[:n]
    drop0 = None
    if rate > 0:
        drop0 = _dropout_mask(rng, x.shape, rate, dt)
        x = x * drop0
    cache = ForwardCache(tokens, mask, drop0)
    for l in range(cfg.num_layers):
        p = f"l{l}."
        a, ln1 = _layer_norm(x, t[p + "ln1_g"], t[p + "ln1_b"])
        att, _, acache = attention(params, l, a, mask)
        m1 = _dropout_mask(rng, att.shape, rate, dt) if rate > 0 else None
        x = x + (att * m1 if m1 is not None else att)
        c, ln2 = _layer_norm(x, t[p + "ln2_g"], t[p + "ln2_b"])
        f1 = c @ t[p + "w1"] + t[p + "b1"]
        gact, tanh = _gelu(f1)
        f2 = gact @ t[p + "w2"] + t[p + "b2"]
        m2 = _dropout_mask(rng, f2.shape, rate, dt) if rate > 0 else None
        x = x + (f2 * m2 if m2 is not None else f2)
        cache.layers.append((ln1, acache, m1, ln2, c, f1, gact, tanh, m2))
    return (x[0] if single else x), cache


def encoder_backward(params: EncoderParams, cache: ForwardCache, dH) -> dict[str, np.ndarray]:
    """Gradients of every encoder tensor given dLoss/dH.

    The returned dict has one entry per tensor in ``params.tensors``;
    ``"emb"`` holds the scattered embedding-row gradients.
    """
    cfg, t = params.config, params.tensors
    dH = np.asarray(dH)
    if dH.ndim == 2:
        dH = dH[None]
    if dH.shape != cache.tokens.shape + (cfg.d_model,):
        raise ValueError(f"dH shape {dH.shape} does not match cache {cache.tokens.shape}")
    d = cfg.d_model
    grads: dict[str, np.ndarray] = {}
    dx = dH * cache.mask[:, :, None]
    for l in reversed(range(cfg.num_layers)):
        p = f"l{l}."
        ln1, acache, m1, ln2, c, f1, gact, tanh, m2 = cache.layers[l]
        df2 = dx * m2 if m2 is not None else dx
        grads[p + "w2"] = gact.reshape(-1, cfg.d_ff).T @ df2.reshape(-1, d)
        grads[p + "b2"] = df2.reshape(-1, d).sum(0)
        dg = df2 @ t[p + "w2"].T
        df1 = _gelu_back(dg, f1, tanh)
        grads[p + "w1"] = c.reshape(-1, d).T @ df1.reshape(-1, cfg.d_ff)
        grads[p + "b1"] = df1.reshape(-1, cfg.d_ff).sum(0)
        dc = df1 @ t[p + "w1"].T
        dln, grads[p + "ln2_g"], grads[p + "ln2_b"] = _layer_norm_back(dc, t[p + "ln2_g"], ln2)
        dx = dx + dln
        datt = dx * m1 if m1 is not None else dx
        da = _attention_back(params, l, datt, acache, grads)
        dln, grads[p + "ln1_g"], grads[p + "ln1_b"] = _layer_norm_back(da, t[p + "ln1_g"], ln1)
        dx = dx + dln
    if cache.drop0 is not None:
        dx = dx * cache.drop0
    demb = np.zeros_like(t["emb"])
    np.add.at(demb, cache.tokens.ravel(), dx.reshape(-1, d) * dx.dtype.type(np.sqrt(d)))
    grads["emb"] = demb
    return {k: grads[k] for k in t}


# -- gradient checking -----------------------------------------------------------


def max_relative_error(loss_fn: Callable[[], float], params: dict[str, np.ndarray],
                       grads: dict[str, np.ndarray], step: float = 1e-5) -> float:
    """Worst ``|g - g_fd| / max(|g_fd|, 1e-8)`` over every entry of ``params``.

    ``loss_fn`` re-evaluates the loss reading ``params`` in place; each entry
    is perturbed by +-``step`` and restored.
    """
    worst = 0.0
    for name, arr in params.items():
        g = grads[name]
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            fd = (up - down) / (2 * step)
            err = abs(g.reshape(-1)[i] - fd) / max(abs(fd), 1e-8)
            worst = max(worst, float(err))
    return worst


def tiny_config(vocab_size: int = 7) -> EncoderConfig:
    return EncoderConfig(vocab_size=vocab_size, num_layers=1, num_heads=2, d_model=4,
                         d_ff=8, dropout_rate=0.0, max_len=8)


def grad_check(config: EncoderConfig | None = None, seed: int = 0, with_head: bool = False,
               n: int = 3, num_labels: int = 3) -> float:
    """Finite-difference check of the encoder (optionally + one CRF head) in float64.

    The loss is ``sum(H)`` for the bare encoder and the CRF NLL of a random
    gold path otherwise. Returns the worst relative error.
    """
    config = config or tiny_config()
    if config.dropout_rate:
        raise ValueError("grad_check requires dropout_rate == 0")
    rng = np.random.default_rng(seed)
    params = EncoderParams.init(config, rng, dtype=np.float64)
    # Perturb away from the symmetric init so no gradient vanishes by accident.
    for k, v in params.tensors.items():
        v += rng.normal(scale=0.1, size=v.shape)
    tokens = rng.integers(0, config.vocab_size, size=(1, n))
    mask = np.ones((1, n), bool)
    named = dict(params.tensors)

    if with_head:
        head = crf.CrfHead.init("DISFL", config.d_model, num_labels, rng, dtype=np.float64)
        for v in head.named_params().values():
            v += rng.normal(scale=0.1, size=v.shape)
        gold = rng.integers(0, num_labels, size=(1, n))
        named.update({f"head.{k}": v for k, v in head.named_params().items()})

        def loss_fn():
            H, _ = encoder_forward(params, tokens, mask)
            return crf.batch_nll(crf.emissions(head, H), mask, gold, head.T, head.s, head.e)[0]

        H, cache = encoder_forward(params, tokens, mask)
        _, dE, dT, ds, de = crf.batch_nll(crf.emissions(head, H), mask, gold, head.T, head.s, head.e)
        grads = encoder_backward(params, cache, dE @ head.W.T)
        grads.update({"head.W": H.reshape(-1, config.d_model).T @ dE.reshape(-1, num_labels),
                      "head.b": dE.reshape(-1, num_labels).sum(0),
                      "head.T": dT, "head.s": ds, "head.e": de})
    else:
        def loss_fn():
            return float(encoder_forward(params, tokens, mask)[0].sum())

        H, cache = encoder_forward(params, tokens, mask)
        grads = encoder_backward(params, cache, np.ones_like(H))
    return max_relative_error(loss_fn, named, grads)
