"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Small graphs, explicit ops, no broadcasting surprises: every op checks
the shapes it supports and raises ValueError otherwise. Gradients are
accumulated lazily (``grad`` stays None until backward reaches a node)
and nodes with ``requires_grad=False`` are pruned from the tape, so
frozen modules cost nothing during backprop.
"""

import math

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """A node in the computation graph: float64 data plus backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def backward(self):
        """Backpropagate from this scalar through the recorded graph."""
        if self.data.shape != ():
            raise ValueError(f"backward() requires a scalar, got shape {self.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()


def constant(data):
    return Tensor(data, requires_grad=False)


def parameter(data):
    return Tensor(data, requires_grad=True)


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _node(data, parents, backward):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def matmul(a, b):
    """2-D matrix product (M,K) @ (K,N) -> (M,N)."""
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dims differ: {a.shape} vs {b.shape}")
    out_data = a.data @ b.data

    def backward():
        _accum(a, out.grad @ b.data.T)
        _accum(b, a.data.T @ out.grad)

    out = _node(out_data, (a, b), backward)
    return out


def add(a, b):
    """Elementwise sum. Also accepts a (M,N) plus a (N,) bias row."""
    if a.shape == b.shape:
        def backward():
            _accum(a, out.grad)
            _accum(b, out.grad)
    elif a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        def backward():
            _accum(a, out.grad)
            _accum(b, out.grad.sum(axis=0))
    else:
        raise ValueError(f"add shapes incompatible: {a.shape} vs {b.shape}")
    out = _node(a.data + b.data, (a, b), backward)
    return out


def sub(a, b):
    if a.shape != b.shape:
        raise ValueError(f"sub shapes differ: {a.shape} vs {b.shape}")

    def backward():
        _accum(a, out.grad)
        _accum(b, -out.grad)

    out = _node(a.data - b.data, (a, b), backward)
    return out


def mul(a, b):
    """Elementwise (Hadamard) product of same-shape tensors."""
    if a.shape != b.shape:
        raise ValueError(f"mul shapes differ: {a.shape} vs {b.shape}")

    def backward():
        _accum(a, out.grad * b.data)
        _accum(b, out.grad * a.data)

    out = _node(a.data * b.data, (a, b), backward)
    return out


def scale(a, c):
    c = float(c)

    def backward():
        _accum(a, out.grad * c)

    out = _node(a.data * c, (a,), backward)
    return out


def add_n(tensors):
    """Sum of several same-shape tensors."""
    tensors = list(tensors)
    if not tensors:
        raise ValueError("add_n needs at least one tensor")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ValueError(f"add_n shapes differ: {shape} vs {t.shape}")
    acc = tensors[0].data.copy()
    for t in tensors[1:]:
        acc += t.data

    def backward():
        for t in tensors:
            _accum(t, out.grad)

    out = _node(acc, tuple(tensors), backward)
    return out


def transpose(a):
    if a.ndim != 2:
        raise ValueError(f"transpose needs a 2-D tensor, got {a.shape}")

    def backward():
        _accum(a, out.grad.T)

    out = _node(a.data.T, (a,), backward)
    return out


def reshape(a, shape):
    if int(np.prod(shape, dtype=np.int64)) != a.data.size and -1 not in shape:
        raise ValueError(f"cannot reshape {a.shape} to {shape}")
    old = a.shape

    def backward():
        _accum(a, out.grad.reshape(old))

    out = _node(a.data.reshape(shape), (a,), backward)
    return out


def concat_rows(tensors):
    """Stack 2-D tensors with equal column counts along axis 0."""
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat_rows needs at least one tensor")
    cols = tensors[0].shape[1]
    for t in tensors:
        if t.ndim != 2 or t.shape[1] != cols:
            raise ValueError("concat_rows needs 2-D tensors with equal column counts")
    splits = np.cumsum([t.shape[0] for t in tensors])[:-1]

    def backward():
        for t, g in zip(tensors, np.split(out.grad, splits, axis=0)):
            _accum(t, g)

    out = _node(np.concatenate([t.data for t in tensors], axis=0), tuple(tensors), backward)
    return out


def slice_rows(a, start, stop):
    if a.ndim != 2:
        raise ValueError(f"slice_rows needs a 2-D tensor, got {a.shape}")
    if not (0 <= start <= stop <= a.shape[0]):
        raise ValueError(f"row slice [{start}:{stop}] out of range for {a.shape}")

    def backward():
        g = np.zeros_like(a.data)
        g[start:stop] = out.grad
        _accum(a, g)

    out = _node(a.data[start:stop].copy(), (a,), backward)
    return out


def concat_cols(tensors):
    """Stack 2-D tensors with equal row counts along axis 1."""
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat_cols needs at least one tensor")
    rows = tensors[0].shape[0]
    for t in tensors:
        if t.ndim != 2 or t.shape[0] != rows:
            raise ValueError("concat_cols needs 2-D tensors with equal row counts")
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def backward():
        for t, g in zip(tensors, np.split(out.grad, splits, axis=1)):
            _accum(t, g)

    out = _node(np.concatenate([t.data for t in tensors], axis=1), tuple(tensors), backward)
    return out


def slice_cols(a, start, stop):
    if a.ndim != 2:
        raise ValueError(f"slice_cols needs a 2-D tensor, got {a.shape}")
    if not (0 <= start <= stop <= a.shape[1]):
        raise ValueError(f"column slice [{start}:{stop}] out of range for {a.shape}")

    def backward():
        g = np.zeros_like(a.data)
        g[:, start:stop] = out.grad
        _accum(a, g)

    out = _node(a.data[:, start:stop].copy(), (a,), backward)
    return out


def sum_all(a):
    def backward():
        _accum(a, np.full(a.shape, float(out.grad)))

    out = _node(a.data.sum(), (a,), backward)
    return out


def mean_all(a):
    n = a.data.size

    def backward():
        _accum(a, np.full(a.shape, float(out.grad) / n))

    out = _node(a.data.mean(), (a,), backward)
    return out


def softmax_rows(x):
    """Row-wise softmax of a 2-D tensor, stabilised by row-max subtraction."""
    if x.ndim != 2:
        raise ValueError(f"softmax_rows needs a 2-D tensor, got {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def backward():
        g = out.grad
        dot = (g * s).sum(axis=1, keepdims=True)
        _accum(x, s * (g - dot))

    out = _node(s, (x,), backward)
    return out


def layer_norm(x, gamma, beta, eps=1e-5):
    """Per-row normalisation of a 2-D tensor followed by an affine map."""
    if x.ndim != 2:
        raise ValueError(f"layer_norm needs a 2-D tensor, got {x.shape}")
    n = x.shape[1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ValueError(f"layer_norm affine params must have shape ({n},)")
    mu = x.data.mean(axis=1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=1, keepdims=True)
    std_inv = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mu) * std_inv

    def backward():
        g = out.grad
        _accum(beta, g.sum(axis=0))
        _accum(gamma, (g * x_hat).sum(axis=0))
        dxh = g * gamma.data
        term = n * dxh - dxh.sum(axis=1, keepdims=True) - x_hat * (dxh * x_hat).sum(axis=1, keepdims=True)
        _accum(x, std_inv / n * term)

    out = _node(gamma.data * x_hat + beta.data, (x, gamma, beta), backward)
    return out


def gelu(x):
    """Exact-erf GELU: x * Phi(x)."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)

    def backward():
        _accum(x, out.grad * (cdf + x.data * pdf))

    out = _node(x.data * cdf, (x,), backward)
    return out


def l2_loss(a, b):
    """Mean squared difference between two same-shape tensors (scalar)."""
    if a.shape != b.shape:
        raise ValueError(f"l2_loss shapes differ: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size

    def backward():
        g = float(out.grad) * 2.0 / n * diff
        _accum(a, g)
        _accum(b, -g)

    out = _node((diff * diff).mean(), (a, b), backward)
    return out


def sq_diff(a, b):
    """Sum of squared differences, i.e. the squared Frobenius distance."""
    if a.shape != b.shape:
        raise ValueError(f"sq_diff shapes differ: {a.shape} vs {b.shape}")
    diff = a.data - b.data

    def backward():
        g = float(out.grad) * 2.0 * diff
        _accum(a, g)
        _accum(b, -g)

    out = _node((diff * diff).sum(), (a, b), backward)
    return out


def masked_cross_entropy(logits, labels, active):
    """Mean cross-entropy over the columns listed in `active` only.

    `labels` hold global class ids that must all appear in `active`.
    Columns outside `active` are sliced away before any arithmetic, so
    the loss is bitwise invariant to their contents and they receive
    zero gradient.
    """
    if logits.ndim != 2:
        raise ValueError(f"masked_cross_entropy needs 2-D logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ValueError("labels must be a 1-D array with one entry per logits row")
    active = np.asarray(sorted(set(int(c) for c in active)), dtype=np.int64)
    if active.size == 0:
        raise ValueError("active class set is empty")
    if active[0] < 0 or active[-1] >= logits.shape[1]:
        raise ValueError("active class id out of range for logits")
    col_of = {int(c): i for i, c in enumerate(active)}
    try:
        label_cols = np.array([col_of[int(y)] for y in labels], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]} not in active class set") from None

    sub = logits.data[:, active]
    shifted = sub - sub.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    batch = logits.shape[0]
    loss = -logp[np.arange(batch), label_cols].mean()

    def backward():
        probs = np.exp(logp)
        probs[np.arange(batch), label_cols] -= 1.0
        g = np.zeros_like(logits.data)
        g[:, active] = probs * (float(out.grad) / batch)
        _accum(logits, g)

    out = _node(loss, (logits,), backward)
    return out


class ParamSet:
    """An ordered, named collection of parameters."""

    def __init__(self):
        self._params = {}

    def add(self, name, tensor):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._params[name] = tensor
        return tensor

    def extend(self, other):
        for name, t in other.items():
            self.add(name, t)

    def items(self):
        return list(self._params.items())

    def names(self):
        return list(self._params)

    def get(self, name):
        return self._params[name]

    def trainable_items(self):
        return [(n, t) for n, t in self._params.items() if t.requires_grad]

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def freeze(self):
        for t in self._params.values():
            t.requires_grad = False

    def n_params(self):
        return sum(t.data.size for t in self._params.values())

    def __len__(self):
        return len(self._params)

    def __contains__(self, name):
        return name in self._params


class GradCheckEntry:
    def __init__(self, name, max_abs_err, max_rel_err, ok):
        self.name = name
        self.max_abs_err = max_abs_err
        self.max_rel_err = max_rel_err
        self.ok = ok

    def __repr__(self):
        status = "ok" if self.ok else "FAIL"
        return f"<{self.name}: rel={self.max_rel_err:.3e} {status}>"


class GradCheckReport:
    def __init__(self, entries, tol):
        self.entries = entries
        self.tol = tol

    @property
    def ok(self):
        return all(e.ok for e in self.entries)

    def worst(self):
        return max(self.entries, key=lambda e: e.max_rel_err)


def grad_check(fn, params, h=1e-5, tol=1e-4):
    """Compare analytic gradients of `fn` against central differences.

    `fn` must rebuild its graph from the current parameter data on every
    call and return a scalar Tensor. Only trainable parameters appear in
    the report; frozen ones are neither perturbed nor listed.
    """
    if isinstance(params, ParamSet):
        named = params.trainable_items()
    else:
        named = [(n, t) for n, t in params if t.requires_grad]
    for _, t in named:
        t.grad = None
    loss = fn()
    if not np.isfinite(loss.data):
        raise ValueError("gradient check aborted: loss is not finite")
    loss.backward()
    analytic = {}
    for name, t in named:
        analytic[name] = np.zeros_like(t.data) if t.grad is None else t.grad.copy()

    entries = []
    for name, t in named:
        a = analytic[name]
        max_abs = 0.0
        max_rel = 0.0
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(fn().data)
            flat[i] = orig - h
            down = float(fn().data)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            ai = float(a.reshape(-1)[i])
            abs_err = abs(ai - numeric)
            denom = max(abs(ai), abs(numeric))
            rel = 0.0 if denom < 1e-10 else abs_err / denom
            if not np.isfinite(numeric):
                rel = float("inf")
            max_abs = max(max_abs, abs_err)
            max_rel = max(max_rel, rel)
        entries.append(GradCheckEntry(name, max_abs, max_rel, max_rel <= tol))
    return GradCheckReport(entries, tol)
