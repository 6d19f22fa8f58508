"""Tape-based reverse-mode differentiation over a small set of array primitives.

Every primitive accepts plain ``numpy`` arrays or :class:`Var` values. With no
:class:`Var` among its inputs a primitive just returns the array, so layer code
doubles as a cheap inference path. Inputs that are plain arrays are constants
and receive no gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.special

from . import kernels


class Var:
    __slots__ = ("value", "tape", "index")

    def __init__(self, value: np.ndarray, tape: "Tape", index: int):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, node={self.index})"


@dataclass
class _Node:
    parents: tuple
    vjp: Callable | None


class Tape:
    """Append-only record of primitive applications.

    ``backward`` walks the nodes in reverse append order, once each.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def param(self, value) -> Var:
        value = np.array(value, dtype=np.float64)
        self.nodes.append(_Node((), None))
        return Var(value, self, len(self.nodes) - 1)

    def params(self, values: dict) -> dict:
        return {k: self.param(v) for k, v in values.items()}

    def _record(self, value, parents, vjp) -> Var:
        self.nodes.append(_Node(tuple(parents), vjp))
        return Var(value, self, len(self.nodes) - 1)

    def backward(self, loss: Var) -> "Gradients":
        if not isinstance(loss, Var) or loss.tape is not self:
            raise ValueError("loss must be a value recorded on this tape")
        if loss.value.size != 1:
            raise ValueError(f"loss must be a scalar, got shape {loss.value.shape}")
        grads: list = [None] * len(self.nodes)
        grads[loss.index] = np.ones_like(loss.value)
        for i in range(loss.index, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.vjp is None:
                continue
            parent_grads = node.vjp(g)
            for parent, pg in zip(node.parents, parent_grads):
                if parent is None or pg is None:
                    continue
                j = parent.index
                grads[j] = pg if grads[j] is None else grads[j] + pg
        return Gradients(grads)


@dataclass
class Gradients:
    _grads: list = field(repr=False)

    def of(self, var: Var) -> np.ndarray:
        g = self._grads[var.index]
        return np.zeros_like(var.value) if g is None else g

    def collect(self, params: dict) -> dict:
        return {k: self.of(v) for k, v in params.items()}


def value(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tape_of(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ValueError("operands recorded on different tapes")
    return tape


def _emit(out, inputs: Sequence, vjp):
    tape = _tape_of(*inputs)
    if tape is None:
        return out
    parents = [x if isinstance(x, Var) else None for x in inputs]
    return tape._record(out, parents, vjp)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --- primitives -------------------------------------------------------------------

def add(a, b):
    av, bv = value(a), value(b)
    return _emit(av + bv, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def scale(a, c: float):
    return _emit(value(a) * c, (a,), lambda g: (g * c,))


def sub(a, b):
    return add(a, scale(b, -1.0))


def mul(a, b):
    av, bv = value(a), value(b)
    return _emit(
        av * bv, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))
    )


def einsum(spec: str, *operands):
    """Tensor contraction in ``numpy.einsum`` notation (explicit output subscripts, no ellipsis)."""
    ins, out_sub = spec.replace(" ", "").split("->")
    in_subs = ins.split(",")
    if len(in_subs) != len(operands):
        raise ValueError(f"{spec!r} expects {len(in_subs)} operands")
    vals = [value(o) for o in operands]
    for sub_, v in zip(in_subs, vals):
        if len(sub_) != v.ndim:
            raise ValueError(f"operand of shape {v.shape} does not match subscripts {sub_!r}")
    out = np.einsum(spec, *vals)

    def vjp(g):
        grads = []
        for i, sub_ in enumerate(in_subs):
            if not isinstance(operands[i], Var):
                grads.append(None)
                continue
            others = [s for j, s in enumerate(in_subs) if j != i]
            other_vals = [v for j, v in enumerate(vals) if j != i]
            available = set(out_sub).union(*others)
            # indices summed away in this operand alone come back by broadcasting
            kept = "".join(ch for ch in sub_ if ch in available)
            grad_spec = ",".join([out_sub] + others) + "->" + kept
            partial = np.einsum(grad_spec, g, *other_vals)
            shape = [vals[i].shape[k] if ch in available else 1 for k, ch in enumerate(sub_)]
            grads.append(np.broadcast_to(partial.reshape(shape), vals[i].shape).copy())
        return grads

    return _emit(out, operands, vjp)


def gp(x, y, table):
    """Weighted blade-product bilinear map ``out[n,c,a^b] += table[c,a,b] x[n,c,a] y[n,c,b]``.

    With ``table`` the algebra's sign table this is the geometric product.
    """
    xv, yv, tv = value(x), value(y), value(table)
    out = kernels.xor_bilinear(xv, yv, tv)

    def vjp(g):
        gx = kernels.xor_bilinear(g, yv, kernels.permute_for_left(tv)) if isinstance(x, Var) else None
        gy = kernels.xor_bilinear(xv, g, kernels.permute_for_right(tv)) if isinstance(y, Var) else None
        gt = kernels.xor_bilinear_table_grad(g, xv, yv, tv.shape[0]) if isinstance(table, Var) else None
        return gx, gy, gt

    return _emit(out, (x, y, table), vjp)


def project(x, mask: np.ndarray):
    """Zero the trailing-axis entries where ``mask`` is 0 (a symmetric idempotent map)."""
    mask = np.asarray(mask, dtype=np.float64)
    return _emit(value(x) * mask, (x,), lambda g: (g * mask,))


def reshape(x, shape):
    xv = value(x)
    return _emit(xv.reshape(shape), (x,), lambda g: (g.reshape(xv.shape),))


def gather(x, index: np.ndarray):
    """``x[..., index]`` along the last axis; the gradient scatter-adds back."""
    xv = value(x)
    index = np.asarray(index)

    def vjp(g):
        lead = xv.shape[:-1]
        flat = g.reshape(lead + (-1,))
        out = np.zeros_like(xv)
        for pos in np.ndindex(*lead):
            out[pos] = np.bincount(index.reshape(-1), weights=flat[pos], minlength=xv.shape[-1])
        return (out,)

    return _emit(xv[..., index], (x,), vjp)


def sigmoid(x):
    xv = value(x)
    s = np.where(xv >= 0, 1.0 / (1.0 + np.exp(-np.abs(xv))), np.exp(-np.abs(xv)) / (1.0 + np.exp(-np.abs(xv))))
    return _emit(s, (x,), lambda g: (g * s * (1.0 - s),))


def reciprocal(x, floor: float | None = None):
    """``1 / x``; with ``floor`` set, ``|x| < floor`` is clamped to ``sign(x) * floor`` (sign(0) = +1)."""
    xv = value(x)
    clamped = xv
    active = np.ones_like(xv, dtype=bool)
    if floor is not None:
        active = np.abs(xv) >= floor
        clamped = np.where(active, xv, np.where(xv >= 0, floor, -floor))
    out = 1.0 / clamped
    return _emit(out, (x,), lambda g: (np.where(active, -g * out * out, 0.0),))


def square(x):
    xv = value(x)
    return _emit(xv * xv, (x,), lambda g: (2.0 * g * xv,))


def reduce_sum(x, axis=None, keepdims: bool = False):
    xv = value(x)
    out = np.sum(xv, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xv.shape).copy(),)

    return _emit(out, (x,), vjp)


def sign_ste(x, clip: float = 3.0):
    """Sign with ``sign(0) = +1``; straight-through gradient masked to ``|x| <= clip``."""
    xv = value(x)
    out = np.where(xv >= 0, 1.0, -1.0)
    return _emit(out, (x,), lambda g: (g * (np.abs(xv) <= clip),))


def silu(x):
    xv = value(x)
    s = scipy.special.expit(xv)
    return _emit(xv * s, (x,), lambda g: (g * (s + xv * s * (1.0 - s)),))


def relu(x):
    xv = value(x)
    return _emit(np.maximum(xv, 0.0), (x,), lambda g: (g * (xv > 0),))


def mean(x):
    return scale(reduce_sum(x), 1.0 / value(x).size)


def mse(pred, target):
    return mean(square(sub(pred, target)))


# --- optimiser --------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """Bias-corrected Adam update; returns new parameter arrays, updates ``state`` in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name], state.v[name] = m, v
        new[name] = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return new, state
