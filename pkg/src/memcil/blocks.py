"""Attention building blocks, the memory-retrieval module, the temporal
encoder, and the growing classifier head.

All blocks are plain Python objects holding Tensors; forward passes
compose ops from :mod:`memcil.tensor` so gradients come for free.
"""

import math

import numpy as np

from .tensor import (
    ParamSet,
    add,
    concat_cols,
    gelu,
    layer_norm,
    matmul,
    parameter,
    reshape,
    scale,
    slice_cols,
    slice_rows,
    softmax_rows,
    transpose,
)


def uniform_init(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class LayerNorm:
    def __init__(self, d, eps=1e-5):
        self.gamma = parameter(np.ones(d))
        self.beta = parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x):
        return layer_norm(x, self.gamma, self.beta, self.eps)

    def parameters(self, prefix):
        ps = ParamSet()
        ps.add(f"{prefix}.gamma", self.gamma)
        ps.add(f"{prefix}.beta", self.beta)
        return ps


class Linear:
    def __init__(self, d_in, d_out, rng, bias=True):
        self.weight = parameter(uniform_init(rng, (d_in, d_out), d_in))
        self.bias = parameter(uniform_init(rng, (d_out,), d_in)) if bias else None

    def __call__(self, x):
        out = matmul(x, self.weight)
        if self.bias is not None:
            out = add(out, self.bias)
        return out

    def parameters(self, prefix):
        ps = ParamSet()
        ps.add(f"{prefix}.weight", self.weight)
        if self.bias is not None:
            ps.add(f"{prefix}.bias", self.bias)
        return ps


class MhcaBlock:
    """Multi-head cross attention with bias-free q/k/v/output projections.

    Scores are scaled by 1/sqrt(d_head). Self-attention is the special
    case where queries and keys/values are the same tensor.
    """

    def __init__(self, d, n_heads, rng):
        if d % n_heads != 0:
            raise ValueError(f"model dim {d} not divisible by {n_heads} heads")
        self.d = d
        self.n_heads = n_heads
        self.d_head = d // n_heads
        self.w_q = parameter(uniform_init(rng, (d, d), d))
        self.w_k = parameter(uniform_init(rng, (d, d), d))
        self.w_v = parameter(uniform_init(rng, (d, d), d))
        self.w_o = parameter(uniform_init(rng, (d, d), d))

    def __call__(self, queries, keys_values):
        out, _ = self.forward_with_weights(queries, keys_values)
        return out

    def forward_with_weights(self, queries, keys_values):
        """Return (output (Tq,d), attention weights ndarray (H,Tq,Tk))."""
        if queries.ndim != 2 or queries.shape[1] != self.d:
            raise ValueError(f"queries must be (Tq,{self.d}), got {queries.shape}")
        if keys_values.ndim != 2 or keys_values.shape[1] != self.d:
            raise ValueError(f"keys/values must be (Tk,{self.d}), got {keys_values.shape}")
        q = matmul(queries, self.w_q)
        k = matmul(keys_values, self.w_k)
        v = matmul(keys_values, self.w_v)
        inv = 1.0 / math.sqrt(self.d_head)
        head_outs = []
        weights = np.empty((self.n_heads, queries.shape[0], keys_values.shape[0]))
        for h in range(self.n_heads):
            lo, hi = h * self.d_head, (h + 1) * self.d_head
            qh = slice_cols(q, lo, hi)
            kh = slice_cols(k, lo, hi)
            vh = slice_cols(v, lo, hi)
            attn = softmax_rows(scale(matmul(qh, transpose(kh)), inv))
            weights[h] = attn.data
            head_outs.append(matmul(attn, vh))
        merged = head_outs[0] if self.n_heads == 1 else concat_cols(head_outs)
        return matmul(merged, self.w_o), weights

    def parameters(self, prefix):
        ps = ParamSet()
        ps.add(f"{prefix}.w_q", self.w_q)
        ps.add(f"{prefix}.w_k", self.w_k)
        ps.add(f"{prefix}.w_v", self.w_v)
        ps.add(f"{prefix}.w_o", self.w_o)
        return ps


class FfnBlock:
    """Two-layer feed-forward with GELU; hidden width = expansion * d."""

    def __init__(self, d, rng, expansion=4.0):
        hidden = int(round(d * expansion))
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, d, rng)

    def __call__(self, x):
        return self.fc2(gelu(self.fc1(x)))

    def parameters(self, prefix):
        ps = ParamSet()
        ps.extend(self.fc1.parameters(f"{prefix}.fc1"))
        ps.extend(self.fc2.parameters(f"{prefix}.fc2"))
        return ps


class MrModule:
    """Memory retrieval: cross-attend a prompt over sparse frame features.

    Both attention inputs share one pre-LayerNorm; the FFN has its own.
    The two residual paths add the raw (un-normalised) prompt and
    intermediate, so with zeroed value/FFN output weights the module is
    an exact identity on the prompt.
    """

    arch = "cross_attention"
    uses_prompt = True

    def __init__(self, d, n_heads, rng):
        self.d = d
        self.ln_attn = LayerNorm(d)
        self.ln_ffn = LayerNorm(d)
        self.attn = MhcaBlock(d, n_heads, rng)
        self.ffn = FfnBlock(d, rng)

    def retrieve(self, prompt, sparse):
        """Map (P_len,d) prompt + (l,d) sparse features to (P_len,d)."""
        if prompt.ndim != 2 or prompt.shape[1] != self.d:
            raise ValueError(f"prompt must be (rows,{self.d}), got {prompt.shape}")
        if sparse.ndim != 2 or sparse.shape[1] != self.d:
            raise ValueError(f"sparse features must be (rows,{self.d}), got {sparse.shape}")
        attended = add(self.attn(self.ln_attn(prompt), self.ln_attn(sparse)), prompt)
        return add(self.ffn(self.ln_ffn(attended)), attended)

    def parameters(self, prefix="mr"):
        ps = ParamSet()
        ps.extend(self.ln_attn.parameters(f"{prefix}.ln_attn"))
        ps.extend(self.attn.parameters(f"{prefix}.attn"))
        ps.extend(self.ln_ffn.parameters(f"{prefix}.ln_ffn"))
        ps.extend(self.ffn.parameters(f"{prefix}.ffn"))
        return ps

    def freeze(self):
        self.parameters().freeze()


def mr_param_count(d):
    """Closed-form parameter count of one retrieval module: 12*d^2 + 9*d."""
    return 12 * d * d + 9 * d


def mr_module_bytes(d):
    """float32 size of one retrieval module's parameters."""
    return mr_param_count(d) * 4


class TemporalEncoder:
    """Aggregate a (T,d) frame sequence into one clip feature.

    A learnable query row cross-attends over the frames through
    `n_layers` pre-LN attention+FFN stages; keys/values are the input
    frames at every layer. The output is the final query state, shape
    (1,d). Positional embeddings are optional so the encoder can be run
    as a pure set function.
    """

    def __init__(self, d, n_heads, rng, n_layers=3, max_len=0):
        self.d = d
        self.n_layers = n_layers
        self.max_len = max_len
        self.query = parameter(rng.normal(0.0, 0.02, size=(1, d)))
        self.pos = parameter(rng.normal(0.0, 0.02, size=(max_len, d))) if max_len > 0 else None
        self.layers = []
        for _ in range(n_layers):
            self.layers.append({
                "ln_attn": LayerNorm(d),
                "attn": MhcaBlock(d, n_heads, rng),
                "ln_ffn": LayerNorm(d),
                "ffn": FfnBlock(d, rng),
            })

    def encode(self, frames, need_attn=False):
        """Return the (1,d) clip feature; optionally also the final-layer
        attention mass over frames as a (T,) ndarray (head-averaged)."""
        if frames.ndim != 2 or frames.shape[1] != self.d:
            raise ValueError(f"frames must be (T,{self.d}), got {frames.shape}")
        t = frames.shape[0]
        if self.pos is not None:
            if t > self.max_len:
                raise ValueError(f"sequence length {t} exceeds max_len {self.max_len}")
            frames = add(frames, slice_rows(self.pos, 0, t))
        q = self.query
        mass = None
        for layer in self.layers:
            attended, weights = layer["attn"].forward_with_weights(
                layer["ln_attn"](q), layer["ln_attn"](frames))
            q = add(attended, q)
            q = add(layer["ffn"](layer["ln_ffn"](q)), q)
            mass = weights.mean(axis=0)[0]
        if need_attn:
            return q, mass
        return q

    def parameters(self, prefix="encoder"):
        ps = ParamSet()
        ps.add(f"{prefix}.query", self.query)
        if self.pos is not None:
            ps.add(f"{prefix}.pos", self.pos)
        for i, layer in enumerate(self.layers):
            ps.extend(layer["ln_attn"].parameters(f"{prefix}.l{i}.ln_attn"))
            ps.extend(layer["attn"].parameters(f"{prefix}.l{i}.attn"))
            ps.extend(layer["ln_ffn"].parameters(f"{prefix}.l{i}.ln_ffn"))
            ps.extend(layer["ffn"].parameters(f"{prefix}.l{i}.ffn"))
        return ps


class Classifier:
    """Linear head over clip features whose rows grow with new classes."""

    def __init__(self, d):
        self.d = d
        self.weight = parameter(np.zeros((0, d)))
        self.bias = parameter(np.zeros((0,)))

    @property
    def n_classes(self):
        return self.weight.shape[0]

    def grow(self, n, rng):
        """Append rows for `n` new classes; existing rows are untouched."""
        if n <= 0:
            raise ValueError(f"cannot grow classifier by {n} classes")
        new_w = uniform_init(rng, (n, self.d), self.d)
        new_b = uniform_init(rng, (n,), self.d)
        grew_w = parameter(np.concatenate([self.weight.data, new_w], axis=0))
        grew_b = parameter(np.concatenate([self.bias.data, new_b]))
        grew_w.requires_grad = self.weight.requires_grad
        grew_b.requires_grad = self.bias.requires_grad
        self.weight = grew_w
        self.bias = grew_b

    def logits(self, z):
        """Map (B,d) clip features to (B,C) logits over all seen classes."""
        if self.n_classes == 0:
            raise ValueError("classifier has no classes yet")
        return add(matmul(z, transpose(self.weight)), self.bias)

    def parameters(self, prefix="classifier"):
        ps = ParamSet()
        ps.add(f"{prefix}.weight", self.weight)
        ps.add(f"{prefix}.bias", self.bias)
        return ps
