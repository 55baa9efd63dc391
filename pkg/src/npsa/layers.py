"""Parameter containers and the building blocks shared by every NP family."""

from __future__ import annotations

import math

import numpy as np

from npsa import tensor as T
from npsa.tensor import Tensor


def glorot(rng, fan_in, fan_out):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_linear(params, rng, name, d_in, d_out):
    params[f"{name}.W"] = Tensor(glorot(rng, d_in, d_out), requires_grad=True, name=f"{name}.W")
    params[f"{name}.b"] = Tensor(np.zeros(d_out), requires_grad=True, name=f"{name}.b")


def mlp_widths(layers, d_in, d_hidden, d_out):
    """Layer (in, out) pairs: ReLU∘Linear blocks then a final Linear.

    ``layers == 1`` degenerates to a single Linear(d_in, d_out).
    """
    if layers < 1:
        raise ValueError("an MLP needs at least one layer")
    if layers == 1:
        return [(d_in, d_out)]
    return [(d_in, d_hidden)] + [(d_hidden, d_hidden)] * (layers - 2) + [(d_hidden, d_out)]


def init_mlp(params, rng, name, layers, d_in, d_hidden, d_out):
    for i, (a, b) in enumerate(mlp_widths(layers, d_in, d_hidden, d_out)):
        init_linear(params, rng, f"{name}.{i}", a, b)


def mlp_forward(params, name, layers, x):
    h = x
    for i in range(layers):
        h = T.linear(h, params[f"{name}.{i}.W"], params[f"{name}.{i}.b"])
        if i < layers - 1:
            h = T.relu(h)
    return h


def init_attention(params, rng, name, d_q, d_k, d_v, d_h):
    init_linear(params, rng, f"{name}.q", d_q, d_h)
    init_linear(params, rng, f"{name}.k", d_k, d_h)
    init_linear(params, rng, f"{name}.v", d_v, d_h)
    init_linear(params, rng, f"{name}.o", d_h, d_h)
    params[f"{name}.ln.g"] = Tensor(np.ones(d_h), requires_grad=True, name=f"{name}.ln.g")
    params[f"{name}.ln.b"] = Tensor(np.zeros(d_h), requires_grad=True, name=f"{name}.ln.b")


def split_heads(x, heads):
    """[n, d_h] -> [heads, n, d_h/heads]"""
    n, d = x.shape
    return T.swapaxes(T.reshape(x, (n, heads, d // heads)), 0, 1)


def merge_heads(x):
    """[heads, n, d] -> [n, heads*d]"""
    h, n, d = x.shape
    return T.reshape(T.swapaxes(x, 0, 1), (n, h * d))


def attention_logits(params, name, queries, keys, heads):
    q = split_heads(T.linear(queries, params[f"{name}.q.W"], params[f"{name}.q.b"]), heads)
    k = split_heads(T.linear(keys, params[f"{name}.k.W"], params[f"{name}.k.b"]), heads)
    d_head = q.shape[-1]
    return T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(d_head))


def attention_readout(params, name, weights, values, heads):
    """Weighted values per head, heads concatenated, projected, layer-normed."""
    v = split_heads(T.linear(values, params[f"{name}.v.W"], params[f"{name}.v.b"]), heads)
    h = merge_heads(T.matmul(weights, v))
    h = T.linear(h, params[f"{name}.o.W"], params[f"{name}.o.b"])
    return T.layer_norm(h, params[f"{name}.ln.g"], params[f"{name}.ln.b"])
