"""Depth-2 student: token/query MLPs, one multi-head attention, MLP head.

Forward and reverse passes are written out by hand against a single flat
parameter vector, so gradients are exact (up to float64 rounding) and the
whole model serializes as one array.  The query is embedded by its own MLP
and provides the attention query; context tokens provide keys and values;
the query token is never part of the key/value set.  The head MLP sees the
projected attention output alone and emits a scalar.

No layer norm, no dropout, no biases inside the attention projections.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(pre):
    return (pre > 0.0).astype(np.float64)


def _tanh(x):
    return np.tanh(x)


def _tanh_grad(pre):
    return 1.0 - np.tanh(pre) ** 2


_ACTIVATIONS = {"relu": (_relu, _relu_grad), "tanh": (_tanh, _tanh_grad)}


@dataclass(frozen=True)
class StudentConfig:
    d_model: int = 8
    d_hidden: int = 8
    n_heads: int = 4
    input_dim: int = 2
    activation: str = "relu"

    def __post_init__(self):
        for name in ("d_model", "d_hidden", "n_heads", "input_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


def _layout(cfg: StudentConfig) -> dict[str, tuple[int, tuple[int, ...]]]:
    """name -> (offset, shape) for the flat parameter vector.

    The layout is a pure function of the config; weights appear in forward
    order so a checkpoint is readable without the code at hand.
    """
    dm, dh, H, hd, di = (cfg.d_model, cfg.d_hidden, cfg.n_heads,
                         cfg.head_dim, cfg.input_dim)
    shapes = [
        ("ctx_w1", (dh, di)), ("ctx_b1", (dh,)),
        ("ctx_w2", (dm, dh)), ("ctx_b2", (dm,)),
        ("qry_w1", (dh, di)), ("qry_b1", (dh,)),
        ("qry_w2", (dm, dh)), ("qry_b2", (dm,)),
        ("attn_q", (H, hd, dm)), ("attn_k", (H, hd, dm)), ("attn_v", (H, hd, dm)),
        ("attn_out", (dm, dm)),
        ("head_w1", (dh, dm)), ("head_b1", (dh,)),
        ("head_w2", (1, dh)), ("head_b2", (1,)),
    ]
    table = {}
    off = 0
    for name, shape in shapes:
        table[name] = (off, shape)
        off += int(np.prod(shape))
    table["__total__"] = (off, ())
    return table


@dataclass
class ModelCache:
    """Intermediates of one forward pass, consumed by backward.

    params_digest pins the exact parameter bytes the pass used; backward
    refuses a cache whose parameters have since changed.
    """

    context: np.ndarray
    query: np.ndarray
    ctx_pre: np.ndarray
    ctx_act: np.ndarray
    ctx_emb: np.ndarray
    qry_pre: np.ndarray
    qry_act: np.ndarray
    qry_emb: np.ndarray
    head_q: np.ndarray
    head_k: np.ndarray
    head_v: np.ndarray
    attn: np.ndarray
    head_out: np.ndarray
    mixed: np.ndarray
    out_pre: np.ndarray
    out_act: np.ndarray
    prediction: float
    params_digest: bytes


def attention_rows(cache: ModelCache) -> np.ndarray:
    """Per-head softmax rows over context positions, shape (n_heads, T)."""
    return cache.attn


class StudentModel:
    """Flat-parameter student network with hand-written gradients."""

    def __init__(self, config: StudentConfig, params: Optional[np.ndarray] = None):
        self.config = config
        self._table = _layout(config)
        self.n_params = self._table["__total__"][0]
        if params is None:
            self.params = np.zeros(self.n_params)
        else:
            params = np.asarray(params, dtype=np.float64)
            if params.shape != (self.n_params,):
                raise ValueError(
                    f"params must have shape ({self.n_params},), got {params.shape}"
                )
            self.params = params.copy()
        self.grads = np.zeros(self.n_params)

    @classmethod
    def init(cls, config: StudentConfig, rng_seed) -> "StudentModel":
        """Glorot-uniform weights, zero biases, deterministic in the seed.

        Each weight matrix is drawn uniform on [-s, s] with
        s = sqrt(6 / (fan_in + fan_out)); the (H, hd, dm) projection stacks
        use per-head fans.
        """
        rng = (rng_seed if isinstance(rng_seed, np.random.Generator)
               else np.random.default_rng(rng_seed))
        model = cls(config)
        for name, (off, shape) in model._table.items():
            if name == "__total__" or name.endswith(("_b1", "_b2")):
                continue
            fan_out, fan_in = shape[-2], shape[-1]
            s = np.sqrt(6.0 / (fan_in + fan_out))
            size = int(np.prod(shape))
            model.params[off:off + size] = rng.uniform(-s, s, size)
        return model

    def block(self, name: str) -> np.ndarray:
        """Writable view of one named parameter block."""
        off, shape = self._table[name]
        return self.params[off:off + int(np.prod(shape))].reshape(shape)

    def grad_block(self, name: str) -> np.ndarray:
        off, shape = self._table[name]
        return self.grads[off:off + int(np.prod(shape))].reshape(shape)

    def block_names(self) -> list[str]:
        return [n for n in self._table if n != "__total__"]

    def _digest(self) -> bytes:
        return hashlib.blake2b(self.params.tobytes(), digest_size=16).digest()

    def forward(self, context_tokens, query_token) -> tuple[float, ModelCache]:
        cfg = self.config
        act, _ = _ACTIVATIONS[cfg.activation]
        C = np.asarray(context_tokens, dtype=np.float64)
        q = np.asarray(query_token, dtype=np.float64)
        if C.ndim != 2 or C.shape[1] != cfg.input_dim or C.shape[0] < 1:
            raise ValueError(
                f"context must be (T, {cfg.input_dim}) with T >= 1, got {C.shape}"
            )
        if q.shape != (cfg.input_dim,):
            raise ValueError(f"query must have shape ({cfg.input_dim},), got {q.shape}")

        ctx_pre = C @ self.block("ctx_w1").T + self.block("ctx_b1")
        ctx_act = act(ctx_pre)
        ctx_emb = ctx_act @ self.block("ctx_w2").T + self.block("ctx_b2")

        qry_pre = self.block("qry_w1") @ q + self.block("qry_b1")
        qry_act = act(qry_pre)
        qry_emb = self.block("qry_w2") @ qry_act + self.block("qry_b2")

        H, hd = cfg.n_heads, cfg.head_dim
        scale = 1.0 / np.sqrt(hd)
        Wq, Wk, Wv = self.block("attn_q"), self.block("attn_k"), self.block("attn_v")
        head_q = Wq @ qry_emb                      # (H, hd)
        head_k = np.einsum("hij,tj->hti", Wk, ctx_emb)   # (H, T, hd)
        head_v = np.einsum("hij,tj->hti", Wv, ctx_emb)   # (H, T, hd)
        scores = scale * np.einsum("hti,hi->ht", head_k, head_q)
        scores -= scores.max(axis=1, keepdims=True)
        attn = np.exp(scores)
        attn /= attn.sum(axis=1, keepdims=True)    # (H, T)
        head_out = np.einsum("ht,hti->hi", attn, head_v)  # (H, hd)
        mixed = self.block("attn_out") @ head_out.reshape(H * hd)

        out_pre = self.block("head_w1") @ mixed + self.block("head_b1")
        out_act = act(out_pre)
        pred = float((self.block("head_w2") @ out_act + self.block("head_b2"))[0])

        cache = ModelCache(C, q, ctx_pre, ctx_act, ctx_emb, qry_pre, qry_act,
                           qry_emb, head_q, head_k, head_v, attn, head_out,
                           mixed, out_pre, out_act, pred, self._digest())
        return pred, cache

    def backward(self, cache: ModelCache, upstream: float) -> None:
        """Write d(prediction)/d(params) * upstream into self.grads.

        Overwrites grads on every call; callers accumulate explicitly.
        """
        if cache.params_digest != self._digest():
            raise ValueError(
                "stale cache: parameters changed since the forward pass"
            )
        cfg = self.config
        _, act_grad = _ACTIVATIONS[cfg.activation]
        H, hd = cfg.n_heads, cfg.head_dim
        scale = 1.0 / np.sqrt(hd)
        g = self.grads
        g[:] = 0.0
        up = float(upstream)

        # head MLP
        d_out_act = up * self.block("head_w2")[0]
        self.grad_block("head_w2")[0, :] = up * cache.out_act
        self.grad_block("head_b2")[0] = up
        d_out_pre = d_out_act * act_grad(cache.out_pre)
        self.grad_block("head_w1")[:] = np.outer(d_out_pre, cache.mixed)
        self.grad_block("head_b1")[:] = d_out_pre
        d_mixed = self.block("head_w1").T @ d_out_pre

        # output projection
        flat_out = cache.head_out.reshape(H * hd)
        self.grad_block("attn_out")[:] = np.outer(d_mixed, flat_out)
        d_head_out = (self.block("attn_out").T @ d_mixed).reshape(H, hd)

        # attention: o_h = sum_t a_ht v_ht, a = softmax(scale * k q)
        d_attn = np.einsum("hti,hi->ht", cache.head_v, d_head_out)
        d_head_v = cache.attn[:, :, None] * d_head_out[:, None, :]
        inner = np.einsum("ht,ht->h", cache.attn, d_attn)
        d_scores = cache.attn * (d_attn - inner[:, None])
        d_head_q = scale * np.einsum("ht,hti->hi", d_scores, cache.head_k)
        d_head_k = scale * d_scores[:, :, None] * cache.head_q[:, None, :]

        self.grad_block("attn_q")[:] = np.einsum("hi,j->hij", d_head_q, cache.qry_emb)
        self.grad_block("attn_k")[:] = np.einsum("hti,tj->hij", d_head_k, cache.ctx_emb)
        self.grad_block("attn_v")[:] = np.einsum("hti,tj->hij", d_head_v, cache.ctx_emb)
        Wq, Wk, Wv = self.block("attn_q"), self.block("attn_k"), self.block("attn_v")
        d_qry_emb = np.einsum("hij,hi->j", Wq, d_head_q)
        d_ctx_emb = (np.einsum("hij,hti->tj", Wk, d_head_k)
                     + np.einsum("hij,hti->tj", Wv, d_head_v))

        # query MLP
        self.grad_block("qry_w2")[:] = np.outer(d_qry_emb, cache.qry_act)
        self.grad_block("qry_b2")[:] = d_qry_emb
        d_qry_act = self.block("qry_w2").T @ d_qry_emb
        d_qry_pre = d_qry_act * act_grad(cache.qry_pre)
        self.grad_block("qry_w1")[:] = np.outer(d_qry_pre, cache.query)
        self.grad_block("qry_b1")[:] = d_qry_pre

        # context MLP
        d_ctx_act = d_ctx_emb @ self.block("ctx_w2")
        self.grad_block("ctx_w2")[:] = d_ctx_emb.T @ cache.ctx_act
        self.grad_block("ctx_b2")[:] = d_ctx_emb.sum(axis=0)
        d_ctx_pre = d_ctx_act * act_grad(cache.ctx_pre)
        self.grad_block("ctx_w1")[:] = d_ctx_pre.T @ cache.context
        self.grad_block("ctx_b1")[:] = d_ctx_pre.sum(axis=0)

    def to_dict(self) -> dict:
        return {
            "config": {
                "d_model": self.config.d_model,
                "d_hidden": self.config.d_hidden,
                "n_heads": self.config.n_heads,
                "input_dim": self.config.input_dim,
                "activation": self.config.activation,
            },
            "params": self.params.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StudentModel":
        return cls(StudentConfig(**d["config"]), np.asarray(d["params"]))
