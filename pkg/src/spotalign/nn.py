"""Transformer building blocks over the autodiff engine.

Parameters are registered on a ParameterStore up front; forward functions
look them up by name, so the full and masked image branches (or any other
callers) share weights simply by sharing prefixes.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation
from .params import ParameterStore

NEG_INF = -1e9  # additive attention mask value; keeps arrays finite


def init_linear(store: ParameterStore, name: str, d_in: int, d_out: int,
                bias: bool = True) -> None:
    store.create(f"{name}/w", (d_in, d_out))
    if bias:
        store.create(f"{name}/b", (d_out,), init="zeros")


def linear(store: ParameterStore, name: str, x: Tensor) -> Tensor:
    out = x @ store[f"{name}/w"]
    if f"{name}/b" in store:
        out = out + store[f"{name}/b"]
    return out


def init_layer_norm(store: ParameterStore, name: str, d: int) -> None:
    store.create(f"{name}/g", (d,), init="ones")
    store.create(f"{name}/b", (d,), init="zeros")


def layer_norm(store: ParameterStore, name: str, x: Tensor) -> Tensor:
    return ad.layer_norm(x) * store[f"{name}/g"] + store[f"{name}/b"]


def init_attention(store: ParameterStore, name: str, d: int) -> None:
    for part in ("wq", "wk", "wv", "wo"):
        init_linear(store, f"{name}/{part}", d, d)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, t, d = x.shape
    x = ad.reshape(x, (b, t, heads, d // heads))
    return ad.transpose(x, (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, t, dh = x.shape
    x = ad.transpose(x, (0, 2, 1, 3))
    return ad.reshape(x, (b, t, h * dh))


def attention(store: ParameterStore, name: str, x: Tensor, heads: int,
              causal: bool = False) -> Tensor:
    """Multi-head self-attention on (B, T, d)."""
    b, t, d = x.shape
    if d % heads != 0:
        raise ContractViolation(f"model dim {d} not divisible by {heads} heads")
    q = _split_heads(linear(store, f"{name}/wq", x), heads)
    k = _split_heads(linear(store, f"{name}/wk", x), heads)
    v = _split_heads(linear(store, f"{name}/wv", x), heads)
    scores = (q @ ad.swap_last(k)) * (1.0 / math.sqrt(d // heads))
    if causal:
        mask = np.triu(np.full((t, t), NEG_INF, dtype=x.dtype), k=1)
        scores = scores + Tensor(mask)
    att = ad.softmax(scores)
    out = _merge_heads(att @ v)
    return linear(store, f"{name}/wo", out)


def init_block(store: ParameterStore, name: str, d: int, mlp_ratio: int = 4) -> None:
    init_layer_norm(store, f"{name}/ln1", d)
    init_attention(store, f"{name}/attn", d)
    init_layer_norm(store, f"{name}/ln2", d)
    init_linear(store, f"{name}/mlp/fc1", d, mlp_ratio * d)
    init_linear(store, f"{name}/mlp/fc2", mlp_ratio * d, d)


def block(store: ParameterStore, name: str, x: Tensor, heads: int,
          causal: bool = False) -> Tensor:
    """Pre-norm transformer block: attention then a GELU MLP, both residual."""
    x = x + attention(store, f"{name}/attn", layer_norm(store, f"{name}/ln1", x), heads,
                      causal=causal)
    h = linear(store, f"{name}/mlp/fc1", layer_norm(store, f"{name}/ln2", x))
    h = linear(store, f"{name}/mlp/fc2", ad.gelu(h))
    return x + h


def init_encoder(store: ParameterStore, prefix: str, layers: int, d: int) -> None:
    for i in range(layers):
        init_block(store, f"{prefix}/block{i}", d)
    init_layer_norm(store, f"{prefix}/ln_f", d)


def encoder(store: ParameterStore, prefix: str, x: Tensor, layers: int, heads: int,
            causal: bool = False) -> Tensor:
    for i in range(layers):
        x = block(store, f"{prefix}/block{i}", x, heads, causal=causal)
    return layer_norm(store, f"{prefix}/ln_f", x)
