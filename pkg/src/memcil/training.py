"""Optimizer, learning-rate schedule, and the two training steps.

The incremental step trains on the current task's dense clips with a
locally masked cross-entropy plus two retrieval-matching losses; the
rehearsal step trains encoder and classifier on memory contents with
frozen retrieval modules.
"""

import math
from dataclasses import dataclass

import numpy as np

from .memory import nearest_upsample, subsample
from .tensor import (
    add,
    add_n,
    concat_rows,
    constant,
    l2_loss,
    masked_cross_entropy,
    scale,
    sq_diff,
)


@dataclass(frozen=True)
class LossWeights:
    """Weights of the static (alpha) and temporal (beta) matching losses."""

    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    """Raw per-term values of one incremental step.

    `total` is exactly ce + alpha*sm + beta*tm as evaluated left to
    right in float64; skipped terms are reported as 0.0.
    """

    ce: float
    sm: float
    tm: float
    alpha: float
    beta: float
    total: float


def cosine_lr(base_lr, epoch, n_epochs):
    """Cosine decay from base_lr at epoch 0 toward 0 at epoch n_epochs."""
    if n_epochs < 1:
        raise ValueError("schedule needs at least one epoch")
    if not (0 <= epoch <= n_epochs):
        raise ValueError(f"epoch {epoch} outside [0,{n_epochs}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / n_epochs))


class Adam:
    """Adam with bias correction; no weight decay.

    Parameters whose grad is None in a step are skipped entirely, so
    modules excluded from a stage keep their moments at zero.
    """

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {}
        self._v = {}
        for name, p in params.trainable_items():
            self._m[name] = np.zeros_like(p.data)
            self._v[name] = np.zeros_like(p.data)

    def zero_grad(self):
        self.params.zero_grad()

    def step(self, lr):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.trainable_items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise ValueError(f"non-finite gradient for parameter {name!r}")
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def incremental_step(encoder, classifier, retriever, prompt_of, batch,
                     active_classes, sparse_len, weights, opt, lr,
                     subsample_rng=None, train_strategy="random",
                     retrieval_input="sparse"):
    """One optimizer step on a batch of the current task's dense clips.

    `batch` is a list of (feats (L,d) float64, label). `retriever` may be
    None (no retrieval path at all); `prompt_of` maps a label to its
    prompt Tensor and is only consulted when the retriever uses prompts.
    Training-time subsampling defaults to random per step.

    The static matching term is the squared frame error averaged over
    frames; the temporal term is the squared clip-feature error averaged
    over feature dims. Both normalisations keep the three terms at
    comparable magnitude under the default unit weights. Returns the
    loss breakdown, with sm/tm reported as raw (unweighted) values.
    """
    zs = []
    labels = []
    sm_terms = []
    tm_terms = []
    for feats, label in batch:
        dense = constant(feats)
        z = encoder.encode(dense)
        zs.append(z)
        labels.append(label)
        if retriever is None:
            continue
        if retrieval_input == "dense":
            rows = np.asarray(feats)
        else:
            _, rows = subsample(feats, sparse_len, train_strategy, rng=subsample_rng)
        prompt = prompt_of(label) if retriever.uses_prompt else None
        retrieved = retriever.retrieve(prompt, constant(rows))
        if weights.alpha > 0:
            sm_terms.append(scale(sq_diff(retrieved, dense), 1.0 / dense.shape[0]))
        if weights.beta > 0:
            tm_terms.append(l2_loss(encoder.encode(retrieved), z))
    logits = classifier.logits(concat_rows(zs))
    ce = masked_cross_entropy(logits, labels, active_classes)
    total = ce
    sm_val = 0.0
    tm_val = 0.0
    if sm_terms:
        sm = scale(add_n(sm_terms), 1.0 / len(sm_terms))
        sm_val = sm.item()
        total = add(total, scale(sm, weights.alpha))
    if tm_terms:
        tm = scale(add_n(tm_terms), 1.0 / len(tm_terms))
        tm_val = tm.item()
        total = add(total, scale(tm, weights.beta))
    opt.zero_grad()
    total.backward()
    opt.step(lr)
    return LossBreakdown(ce.item(), sm_val, tm_val, weights.alpha, weights.beta,
                         total.item())


def rehearsal_step(encoder, classifier, batch, lookup, dense_len,
                   seen_classes, opt, lr):
    """One optimizer step on memory contents.

    `batch` is a list of (task_id, label, sparse (l,d) float64).
    `lookup(task_id, label)` returns (retriever, prompt) for that clip,
    or (None, None) to fall back to nearest-neighbour upsampling. Only
    encoder and classifier may be trainable here; retrieval modules are
    used frozen. Returns the cross-entropy value.
    """
    zs = []
    labels = []
    for task_id, label, sparse in batch:
        retriever, prompt = lookup(task_id, label)
        if retriever is None:
            feats = constant(nearest_upsample(sparse, dense_len))
        else:
            feats = retriever.retrieve(prompt, constant(sparse))
        zs.append(encoder.encode(feats))
        labels.append(label)
    logits = classifier.logits(concat_rows(zs))
    ce = masked_cross_entropy(logits, labels, seen_classes)
    opt.zero_grad()
    ce.backward()
    opt.step(lr)
    return ce.item()
