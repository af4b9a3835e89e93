"""Alternative retrieval architectures behind one interface.

Every variant maps (prompt, sparse features) to a dense (out_len, d)
feature matrix. The cross-attention module in :mod:`memcil.blocks` is
the default; the others exist for ablation: parameter-free combiners,
a flattening MLP, plain interpolation, and self-attention over the
concatenated prompt+sparse rows.
"""

import numpy as np

from .blocks import FfnBlock, LayerNorm, Linear, MhcaBlock, MrModule
from .memory import interpolate_upsample, nearest_upsample
from .tensor import ParamSet, add, concat_rows, constant, gelu, mul, reshape, slice_rows

RETRIEVAL_ARCHS = ("cross_attention", "self_attention", "mlp", "add",
                   "multiply", "feature_interpolation")


class SelfAttentionRetrieval:
    """Self-attention over [prompt; sparse] rows; keeps the prompt rows."""

    arch = "self_attention"
    uses_prompt = True

    def __init__(self, d, n_heads, rng):
        self.d = d
        self.ln_attn = LayerNorm(d)
        self.ln_ffn = LayerNorm(d)
        self.attn = MhcaBlock(d, n_heads, rng)
        self.ffn = FfnBlock(d, rng)

    def retrieve(self, prompt, sparse):
        x = concat_rows([prompt, sparse])
        normed = self.ln_attn(x)
        y = add(self.attn(normed, normed), x)
        y = add(self.ffn(self.ln_ffn(y)), y)
        return slice_rows(y, 0, prompt.shape[0])

    def parameters(self, prefix="mr"):
        ps = ParamSet()
        ps.extend(self.ln_attn.parameters(f"{prefix}.ln_attn"))
        ps.extend(self.attn.parameters(f"{prefix}.attn"))
        ps.extend(self.ln_ffn.parameters(f"{prefix}.ln_ffn"))
        ps.extend(self.ffn.parameters(f"{prefix}.ffn"))
        return ps

    def freeze(self):
        self.parameters().freeze()


class MlpRetrieval:
    """Flatten the sparse rows and map them to dense rows with three
    fully-connected layers. Ignores the prompt. Hidden width equals the
    flattened output size, so keep d small."""

    arch = "mlp"
    uses_prompt = False

    def __init__(self, d, sparse_len, out_len, rng):
        self.d = d
        self.sparse_len = sparse_len
        self.out_len = out_len
        hidden = out_len * d
        self.fc1 = Linear(sparse_len * d, hidden, rng)
        self.fc2 = Linear(hidden, hidden, rng)
        self.fc3 = Linear(hidden, out_len * d, rng)

    def retrieve(self, prompt, sparse):
        if sparse.shape != (self.sparse_len, self.d):
            raise ValueError(
                f"mlp retrieval expects ({self.sparse_len},{self.d}) input, got {sparse.shape}")
        h = reshape(sparse, (1, self.sparse_len * self.d))
        h = gelu(self.fc1(h))
        h = gelu(self.fc2(h))
        return reshape(self.fc3(h), (self.out_len, self.d))

    def parameters(self, prefix="mr"):
        ps = ParamSet()
        ps.extend(self.fc1.parameters(f"{prefix}.fc1"))
        ps.extend(self.fc2.parameters(f"{prefix}.fc2"))
        ps.extend(self.fc3.parameters(f"{prefix}.fc3"))
        return ps

    def freeze(self):
        self.parameters().freeze()


class _CombineRetrieval:
    """Shared shape handling for the parameter-free prompt combiners."""

    uses_prompt = True

    def __init__(self, d, out_len):
        self.d = d
        self.out_len = out_len

    def _upsampled(self, sparse):
        return constant(nearest_upsample(sparse.data, self.out_len))

    def parameters(self, prefix="mr"):
        return ParamSet()

    def freeze(self):
        pass


class AddRetrieval(_CombineRetrieval):
    arch = "add"

    def retrieve(self, prompt, sparse):
        return add(prompt, self._upsampled(sparse))


class MultiplyRetrieval(_CombineRetrieval):
    arch = "multiply"

    def retrieve(self, prompt, sparse):
        return mul(prompt, self._upsampled(sparse))


class InterpolationRetrieval:
    """Linear interpolation of the sparse rows; no prompt, no parameters."""

    arch = "feature_interpolation"
    uses_prompt = False

    def __init__(self, d, out_len):
        self.d = d
        self.out_len = out_len

    def retrieve(self, prompt, sparse):
        return constant(interpolate_upsample(sparse.data, self.out_len))

    def parameters(self, prefix="mr"):
        return ParamSet()

    def freeze(self):
        pass


def make_retrieval(arch, d, n_heads, sparse_len, out_len, rng):
    """Build a retrieval module for `arch`; see RETRIEVAL_ARCHS."""
    if arch == "cross_attention":
        return MrModule(d, n_heads, rng)
    if arch == "self_attention":
        return SelfAttentionRetrieval(d, n_heads, rng)
    if arch == "mlp":
        return MlpRetrieval(d, sparse_len, out_len, rng)
    if arch == "add":
        return AddRetrieval(d, out_len)
    if arch == "multiply":
        return MultiplyRetrieval(d, out_len)
    if arch == "feature_interpolation":
        return InterpolationRetrieval(d, out_len)
    raise ValueError(f"unknown retrieval architecture {arch!r}")


def rebuild_retrieval(arch, d, n_heads, sparse_len, out_len, named_arrays):
    """Reconstruct a module from persisted parameter arrays (name -> data)."""
    rng = np.random.default_rng(0)
    module = make_retrieval(arch, d, n_heads, sparse_len, out_len, rng)
    params = module.parameters("mr")
    expected = set(params.names())
    got = set(named_arrays)
    if expected != got:
        missing = sorted(expected - got)
        extra = sorted(got - expected)
        raise ValueError(f"parameter mismatch: missing {missing}, unexpected {extra}")
    for name, tensor in params.items():
        arr = np.asarray(named_arrays[name], dtype=np.float64)
        if arr.shape != tensor.data.shape:
            raise ValueError(f"parameter {name} has shape {arr.shape}, expected {tensor.data.shape}")
        tensor.data = arr.copy()
    return module
