"""Minimal neural-network layer library with explicit backward passes.

Parameters live in a flat dict[str, np.ndarray]; each layer is a pair of
functions, forward returning (output, cache) and backward consuming the
upstream gradient plus that cache while accumulating parameter gradients
into a dict. Everything is dtype-agnostic so tests can run the whole stack
in float64 for finite-difference verification.
"""

from __future__ import annotations

import numpy as np

Params = dict


def accumulate(grads: dict, name: str, g: np.ndarray) -> None:
    if name in grads:
        grads[name] += g
    else:
        grads[name] = g


def glorot_uniform(rng: np.random.Generator, din: int, dout: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (din + dout))
    return rng.uniform(-limit, limit, (din, dout)).astype(dtype)


def init_affine(params: Params, name: str, din: int, dout: int,
                rng: np.random.Generator, dtype) -> None:
    params[f"{name}.w"] = glorot_uniform(rng, din, dout, dtype)
    params[f"{name}.b"] = np.zeros(dout, dtype)


def init_mlp2(params: Params, name: str, din: int, hidden: int, dout: int,
              rng: np.random.Generator, dtype) -> None:
    init_affine(params, f"{name}.fc1", din, hidden, rng, dtype)
    init_affine(params, f"{name}.fc2", hidden, dout, rng, dtype)


def init_layer_norm(params: Params, name: str, dim: int, dtype) -> None:
    params[f"{name}.g"] = np.ones(dim, dtype)
    params[f"{name}.b"] = np.zeros(dim, dtype)


def init_attention(params: Params, name: str, dim: int,
                   rng: np.random.Generator, dtype) -> None:
    for part in ("q", "k", "v", "o"):
        init_affine(params, f"{name}.{part}", dim, dim, rng, dtype)


def init_block(params: Params, name: str, dim: int, ffn_mult: int,
               rng: np.random.Generator, dtype) -> None:
    init_layer_norm(params, f"{name}.ln1", dim, dtype)
    init_attention(params, f"{name}.attn", dim, rng, dtype)
    init_layer_norm(params, f"{name}.ln2", dim, dtype)
    init_mlp2(params, f"{name}.ffn", dim, ffn_mult * dim, dim, rng, dtype)


# ---------------------------------------------------------------------------
# layer forward/backward pairs


def affine_fwd(params: Params, name: str, x: np.ndarray):
    return x @ params[f"{name}.w"] + params[f"{name}.b"], x


def affine_bwd(params: Params, name: str, g: np.ndarray, x: np.ndarray, grads: dict):
    w = params[f"{name}.w"]
    gm = g.reshape(-1, g.shape[-1])
    xm = x.reshape(-1, x.shape[-1])
    accumulate(grads, f"{name}.w", xm.T @ gm)
    accumulate(grads, f"{name}.b", gm.sum(0))
    return g @ w.T


def mlp2_fwd(params: Params, name: str, x: np.ndarray):
    """Affine -> ReLU -> affine."""
    a, _ = affine_fwd(params, f"{name}.fc1", x)
    h = np.maximum(a, 0.0)
    out, _ = affine_fwd(params, f"{name}.fc2", h)
    return out, (x, a, h)


def mlp2_bwd(params: Params, name: str, g: np.ndarray, cache, grads: dict):
    x, a, h = cache
    dh = affine_bwd(params, f"{name}.fc2", g, h, grads)
    da = np.where(a > 0, dh, 0.0)
    return affine_bwd(params, f"{name}.fc1", da, x, grads)


def layer_norm_fwd(params: Params, name: str, x: np.ndarray, eps: float = 1e-5):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return params[f"{name}.g"] * xhat + params[f"{name}.b"], (xhat, inv)


def layer_norm_bwd(params: Params, name: str, g: np.ndarray, cache, grads: dict):
    xhat, inv = cache
    axes = tuple(range(g.ndim - 1))
    accumulate(grads, f"{name}.g", (g * xhat).sum(axes))
    accumulate(grads, f"{name}.b", g.sum(axes))
    dxhat = g * params[f"{name}.g"]
    return inv * (
        dxhat
        - dxhat.mean(-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(-1, keepdims=True)
    )


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, n, d = x.shape
    return x.reshape(b, n, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def attention_fwd(params: Params, name: str, x: np.ndarray, n_heads: int):
    """Multi-head scaled dot-product self-attention over (B, n, D) tokens."""
    q, _ = affine_fwd(params, f"{name}.q", x)
    k, _ = affine_fwd(params, f"{name}.k", x)
    v, _ = affine_fwd(params, f"{name}.v", x)
    qh, kh, vh = (_split_heads(t, n_heads) for t in (q, k, v))
    scale = 1.0 / np.sqrt(qh.shape[-1])
    scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale
    scores -= scores.max(-1, keepdims=True)
    e = np.exp(scores)
    attn = e / e.sum(-1, keepdims=True)
    oh = attn @ vh
    o = _merge_heads(oh)
    out, _ = affine_fwd(params, f"{name}.o", o)
    return out, (x, qh, kh, vh, attn, o, scale)


def attention_bwd(params: Params, name: str, g: np.ndarray, cache, grads: dict):
    x, qh, kh, vh, attn, o, scale = cache
    n_heads = qh.shape[1]
    do = affine_bwd(params, f"{name}.o", g, o, grads)
    doh = _split_heads(do, n_heads)
    dattn = doh @ vh.transpose(0, 1, 3, 2)
    dvh = attn.transpose(0, 1, 3, 2) @ doh
    dscores = attn * (dattn - (dattn * attn).sum(-1, keepdims=True))
    dscores *= scale
    dqh = dscores @ kh
    dkh = dscores.transpose(0, 1, 3, 2) @ qh
    dx = affine_bwd(params, f"{name}.q", _merge_heads(dqh), x, grads)
    dx += affine_bwd(params, f"{name}.k", _merge_heads(dkh), x, grads)
    dx += affine_bwd(params, f"{name}.v", _merge_heads(dvh), x, grads)
    return dx


def block_fwd(params: Params, name: str, x: np.ndarray, n_heads: int):
    """Pre-norm transformer block: x + attn(ln(x)), then u + ffn(ln(u))."""
    t1, c_ln1 = layer_norm_fwd(params, f"{name}.ln1", x)
    at, c_att = attention_fwd(params, f"{name}.attn", t1, n_heads)
    u = x + at
    t2, c_ln2 = layer_norm_fwd(params, f"{name}.ln2", u)
    f, c_ffn = mlp2_fwd(params, f"{name}.ffn", t2)
    return u + f, (c_ln1, c_att, c_ln2, c_ffn)


def block_bwd(params: Params, name: str, g: np.ndarray, cache, grads: dict):
    c_ln1, c_att, c_ln2, c_ffn = cache
    dt2 = mlp2_bwd(params, f"{name}.ffn", g, c_ffn, grads)
    du = g + layer_norm_bwd(params, f"{name}.ln2", dt2, c_ln2, grads)
    dt1 = attention_bwd(params, f"{name}.attn", du, c_att, grads)
    return du + layer_norm_bwd(params, f"{name}.ln1", dt1, c_ln1, grads)


def encoder_fwd(params: Params, name: str, x: np.ndarray, n_layers: int, n_heads: int):
    """Transformer stack followed by mean pooling over tokens."""
    caches = []
    for i in range(n_layers):
        x, cache = block_fwd(params, f"{name}.{i}", x, n_heads)
        caches.append(cache)
    return x.mean(axis=1), (caches, x.shape)


def encoder_bwd(params: Params, name: str, g: np.ndarray, cache, grads: dict):
    caches, shape = cache
    n_layers = len(caches)
    dx = np.broadcast_to(g[:, None, :] / shape[1], shape).copy()
    for i in reversed(range(n_layers)):
        dx = block_bwd(params, f"{name}.{i}", dx, caches[i], grads)
    return dx


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with decoupled weight decay; moment state is lazily keyed by name."""

    def __init__(self, lr: float = 5e-4, weight_decay: float = 1e-5,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: Params, grads: dict, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p)
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.dtype)
            if self.weight_decay:
                p -= (lr * self.weight_decay) * p

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = {k: np.asarray(v) for k, v in state["m"].items()}
        self.v = {k: np.asarray(v) for k, v in state["v"].items()}
