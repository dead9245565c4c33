"""
A minimal reverse-mode tape over numpy arrays.

Nodes are appended in evaluation order, so walking the tape backwards visits
them in reverse topological order; each node's vector-Jacobian product runs
once and parent gradients accumulate in that fixed order.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp, softmax

from normalnorm.exceptions import PreconditionError


@dataclass(eq=False)
class Value:
    data: np.ndarray
    tape: 'Tape'
    node_id: int
    op: str = 'leaf'
    parents: tuple = ()
    grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.data.shape

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class Tape:
    nodes: list = field(default_factory=list)
    vjps: list = field(default_factory=list)

    def leaf(self, data):
        """Register ``data`` (kept by reference, not copied) as a differentiable input."""
        return self._record('leaf', data, (), None)

    def _record(self, op, data, parents, vjp: Optional[Callable]):
        value = Value(data=data, tape=self, node_id=len(self.nodes), op=op, parents=parents)
        self.nodes.append(value)
        self.vjps.append(vjp)
        return value

    def backward(self, output, seed=None):
        if output.tape is not self:
            raise PreconditionError('output was not recorded on this tape')
        if seed is None:
            if output.data.size != 1:
                raise PreconditionError('backward from a non-scalar output needs an explicit seed')
            seed = np.ones_like(output.data)
        for node in self.nodes:
            node.grad = None
        pending = {output.node_id: np.asarray(seed, dtype=np.float64)}
        for node_id in range(output.node_id, -1, -1):
            grad = pending.pop(node_id, None)
            if grad is None:
                continue
            node = self.nodes[node_id]
            node.grad = grad
            vjp = self.vjps[node_id]
            if vjp is None:
                continue
            for parent, parent_grad in zip(node.parents, vjp(grad)):
                if parent_grad is None:
                    continue
                if parent.node_id in pending:
                    pending[parent.node_id] = pending[parent.node_id] + parent_grad
                else:
                    pending[parent.node_id] = parent_grad


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b):
    return a.tape._record('add', a.data + b.data, (a, b),
                          lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b):
    return a.tape._record('mul', a.data * b.data, (a, b),
                          lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def matmul(a, b):
    return a.tape._record('matmul', a.data @ b.data, (a, b),
                          lambda g: (g @ b.data.T, a.data.T @ g))


def total(a):
    return a.tape._record('sum', np.sum(a.data), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def relu(a):
    mask = a.data > 0
    return a.tape._record('relu', np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def norm(layer, x, gamma, beta, step=0, frozen=None):
    """
    Training-mode normalization layer on the tape. ``gamma`` and ``beta`` must
    be leaves wrapping ``layer.state.gamma`` and ``layer.state.beta``.

    Returns the output value and the layer's forward cache.
    """
    out, cache = layer.forward(x.data, training=True, step=step, frozen=frozen)

    def vjp(g):
        return layer.backward(cache, g)

    return x.tape._record('norm', out, (x, gamma, beta), vjp), cache


def softmax_cross_entropy(logits, labels):
    """
    Mean softmax cross-entropy of ``logits`` (batch, classes) against integer ``labels``.
    """
    labels = np.asarray(labels)
    rows = np.arange(labels.size)
    loss = np.mean(logsumexp(logits.data, axis=1) - logits.data[rows, labels])

    def vjp(g):
        probs = softmax(logits.data, axis=1)
        probs[rows, labels] -= 1.0
        return (probs * (g / labels.size),)

    return logits.tape._record('softmax_cross_entropy', np.asarray(loss), (logits,), vjp)
