"""Dense tensors with reverse-mode gradient recording.

Values are numpy arrays (float32 by default, float64 for gradient checking).
Operations in :mod:`lwanet.ops` build a computation graph on the fly when
gradients are enabled; ``Tensor.backward()`` walks it in reverse topological
order. Recording can be suspended with :func:`no_grad` for inference.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import ShapeError

_GRAD_ENABLED = [True]


def grad_enabled() -> bool:
    return _GRAD_ENABLED[0]


@contextlib.contextmanager
def no_grad():
    """Suspend graph recording (inference / benchmarking)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


class Tensor:
    """A numpy array plus optional gradient bookkeeping.

    ``_parents`` and ``_backward`` are filled in by ops when recording; a
    leaf has neither. ``grad`` is (re)assigned by each ``backward()`` call,
    never accumulated across calls.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}{tag})"

    def sum(self) -> "Tensor":
        out = Tensor(np.asarray(self.data.sum(), dtype=self.dtype))
        record(out, (self,), lambda g: (np.full_like(self.data, g),))
        return out

    def backward(self):
        """Reverse-mode sweep from a scalar; assigns ``.grad`` on every
        recorded tensor that requires a gradient."""
        if self.data.shape != ():
            raise ShapeError(
                f"backward requires a scalar loss, got shape {tuple(self.shape)}"
            )
        order = _toposort(self)
        grads = {id(self): np.ones((), dtype=self.dtype)}
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
        for node in order:
            if node.requires_grad:
                g = grads.get(id(node))
                node.grad = g if g is not None else np.zeros_like(node.data)


def _toposort(root: Tensor):
    order = []
    seen = set()
    stack = [(root, iter(root._parents))]
    seen.add(id(root))
    path = [root]
    # iterative DFS; children appended after their parents are done
    while stack:
        node, it = stack[-1]
        advanced = False
        for parent in it:
            if id(parent) not in seen:
                seen.add(id(parent))
                stack.append((parent, iter(parent._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def record(out: Tensor, parents, backward_fn) -> None:
    """Attach graph edges to ``out`` if recording is active and any parent
    participates in differentiation."""
    if not grad_enabled():
        return
    if not any(p.requires_grad for p in parents):
        return
    out.requires_grad = True
    out._parents = tuple(parents)
    out._backward = backward_fn


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
