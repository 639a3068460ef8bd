"""Dense arrays with reverse-mode automatic differentiation.

Small, explicit, numpy-backed. Every operation records its parents and a
backward closure when any input requires gradients; ``Tensor.backward`` on a
scalar output walks the recorded graph in reverse topological order exactly
once, accumulating gradients additively into every requires-grad node.

Values are 32-bit by default. Gradient checking is unreliable in 32-bit, so
``verification_mode()`` switches newly created tensors to 64-bit:

    with verification_mode():
        err = grad_check(fn, x)

Broadcasting is deliberately restricted to trailing-axis bias addition
([n, d] + [d]); everything else must match shapes exactly.
"""

from __future__ import annotations

import hashlib
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .errors import NotScalarOutput, ShapeMismatch, ZeroVector

_DTYPE = np.float32
_GRAD_ENABLED = True


def default_dtype():
    return _DTYPE


@contextmanager
def verification_mode():
    """Create tensors in 64-bit until the context exits."""
    global _DTYPE
    previous = _DTYPE
    _DTYPE = np.float64
    try:
        yield
    finally:
        _DTYPE = previous


@contextmanager
def no_grad():
    """Skip graph recording (evaluation paths)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    """A dense array plus an optional gradient buffer and graph record."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            self.data = data
        else:
            self.data = np.asarray(data, dtype=_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def detached(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into .grad of every requires-grad node.

        Requires a scalar output. Repeated calls keep accumulating; call
        zero_grad on the leaves (or the optimizer) between steps.
        """
        if self.data.ndim != 0 and self.data.size != 1:
            raise NotScalarOutput(f"backward needs a scalar output, got shape {self.shape}")
        if not self.requires_grad:
            return

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        local: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            grad = local.pop(id(node), None)
            if grad is None:
                continue
            node.grad = grad if node.grad is None else node.grad + grad
            if node._backward_fn is None:
                continue
            for parent, parent_grad in zip(node._parents, node._backward_fn(grad)):
                if not parent.requires_grad or parent_grad is None:
                    continue
                key = id(parent)
                if key in local:
                    local[key] = local[key] + parent_grad
                else:
                    local[key] = parent_grad

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        return scale(self, other) if isinstance(other, (int, float)) else mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter:
    """A named tensor; frozen parameters never receive optimizer updates."""

    def __init__(self, name: str, data, frozen: bool = False):
        self.name = name
        self.tensor = data if isinstance(data, Tensor) else Tensor(data)
        self.frozen = frozen
        self.tensor.requires_grad = not frozen

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.zero_grad()

    def freeze(self) -> None:
        self.frozen = True
        self.tensor.requires_grad = False

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.tensor.shape}, frozen={self.frozen})"


def parameters_checksum(params: Sequence[Parameter], frozen_only: bool = False) -> str:
    """SHA-256 over names, shapes, and raw bytes; order-independent by name sort."""
    digest = hashlib.sha256()
    for param in sorted(params, key=lambda p: p.name):
        if frozen_only and not param.frozen:
            continue
        digest.update(param.name.encode())
        digest.update(repr(param.tensor.shape).encode())
        digest.update(np.ascontiguousarray(param.data).tobytes())
    return digest.hexdigest()


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    # op results keep their computed dtype; numpy scalars (0-d op outputs)
    # must not fall into the default-dtype cast the constructor applies
    out.data = np.asarray(data)
    out.grad = None
    out.requires_grad = False
    out._parents = ()
    out._backward_fn = None
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward
    return out


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# ---------------------------------------------------------------------------
# elementwise and arithmetic ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """a + b; same shape, or b a trailing-axis bias vector."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        return _make(a.data + b.data, (a, b), lambda g: (g, g))
    if b.data.ndim == 1 and a.data.ndim >= 2 and a.shape[-1] == b.shape[0]:
        reduce_axes = tuple(range(a.data.ndim - 1))
        return _make(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=reduce_axes)))
    raise ShapeMismatch("add", a.shape, b.shape)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch("mul", a.shape, b.shape)
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeMismatch("transpose", a.shape, ("2-d",))
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)
    return _make(out_data, (a,), lambda g: (g * out_data,))


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return _make(np.maximum(a.data, 0), (a,), lambda g: (g * (a.data > 0),))


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximation GELU."""
    a = _as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out_data = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner),)

    return _make(out_data, (a,), backward)


# ---------------------------------------------------------------------------
# reductions and reshaping
# ---------------------------------------------------------------------------

def tensor_sum(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).astype(a.data.dtype),))


def mean(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size
    return _make(np.asarray(a.data.mean()), (a,), lambda g: ((np.broadcast_to(g, a.shape) / n).astype(a.data.dtype),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return _make(a.data[start:stop].copy(), (a,), backward)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeMismatch("slice_cols", a.shape, ("2-d",))

    def backward(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _make(a.data[:, start:stop].copy(), (a,), backward)


def tile_rows(v: Tensor, n: int) -> Tensor:
    """[d] -> [n, d] by repetition; gradient sums over the new axis."""
    v = _as_tensor(v)
    if v.data.ndim != 1:
        raise ShapeMismatch("tile_rows", v.shape, ("1-d",))
    return _make(np.tile(v.data, (n, 1)), (v,), lambda g: (g.sum(axis=0),))


def tile_cols(v: Tensor, n: int) -> Tensor:
    """[m] -> [m, n] by repetition; gradient sums over the new axis."""
    v = _as_tensor(v)
    if v.data.ndim != 1:
        raise ShapeMismatch("tile_cols", v.shape, ("1-d",))
    return _make(np.tile(v.data[:, None], (1, n)), (v,), lambda g: (g.sum(axis=1),))


# ---------------------------------------------------------------------------
# normalizations and similarity
# ---------------------------------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - inner),)

    return _make(out_data, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    soft = np.exp(out_data)

    def backward(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _make(out_data, (a,), backward)


def layer_norm(a: Tensor, gain: Tensor | None = None, bias: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis; optional learnable gain/bias of size [d]."""
    a = _as_tensor(a)
    d = a.shape[-1]
    if d < 1:
        raise ShapeMismatch("layer_norm", a.shape, ("last axis >= 1",))
    for p in (gain, bias):
        if p is not None and p.shape != (d,):
            raise ShapeMismatch("layer_norm", a.shape, p.shape)

    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    out_data = xhat
    if gain is not None:
        out_data = out_data * gain.data
    if bias is not None:
        out_data = out_data + bias.data

    parents: list[Tensor] = [a]
    if gain is not None:
        parents.append(gain)
    if bias is not None:
        parents.append(bias)
    reduce_axes = tuple(range(a.data.ndim - 1))

    def backward(g):
        gh = g * gain.data if gain is not None else g
        dx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        grads = [dx]
        if gain is not None:
            grads.append((g * xhat).sum(axis=reduce_axes) if reduce_axes else g * xhat)
        if bias is not None:
            grads.append(g.sum(axis=reduce_axes) if reduce_axes else g)
        return tuple(grads)

    return _make(out_data, tuple(parents), backward)


def embedding_gather(table: Tensor, indices) -> Tensor:
    """Select rows of ``table`` by integer index; gradient scatter-adds."""
    table = _as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(table.data[idx].copy(), (table,), backward)


def l2_normalize(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each row (last axis) to unit L2 norm. Raises ZeroVector on zero rows."""
    a = _as_tensor(a)
    norms = np.linalg.norm(a.data, axis=-1, keepdims=True)
    if np.any(norms < eps):
        raise ZeroVector("cannot normalize a zero-norm vector")
    out_data = a.data / norms

    def backward(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        return ((g - out_data * dot) / norms,)

    return _make(out_data, (a,), backward)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of two 1-d vectors, as a scalar tensor."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 1 or a.shape != b.shape:
        raise ShapeMismatch("cosine_similarity", a.shape, b.shape)
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    if na < 1e-12 or nb < 1e-12:
        raise ZeroVector("cosine similarity of a zero-norm vector")
    s = float(a.data @ b.data) / (na * nb)

    def backward(g):
        g = float(g)
        return (
            g * (b.data / (na * nb) - s * a.data / (na * na)),
            g * (a.data / (na * nb) - s * b.data / (nb * nb)),
        )

    return _make(np.asarray(s, dtype=a.data.dtype), (a, b), backward)


def relation_bias(q: Tensor, table: Tensor, rel) -> Tensor:
    """Pairwise position scores: out[i, j] = q[i] . table[rel[i, j]].

    ``rel`` is a constant [n, n] integer matrix of relation codes indexing
    rows of ``table`` ([n_relations, head_dim]).
    """
    q, table = _as_tensor(q), _as_tensor(table)
    rel = np.asarray(rel, dtype=np.int64)
    if q.data.ndim != 2 or table.data.ndim != 2 or q.shape[1] != table.shape[1]:
        raise ShapeMismatch("relation_bias", q.shape, table.shape)
    if rel.shape != (q.shape[0], q.shape[0]):
        raise ShapeMismatch("relation_bias", rel.shape, (q.shape[0], q.shape[0]))
    gathered = table.data[rel]  # [n, n, head_dim]
    out_data = np.einsum("ik,ijk->ij", q.data, gathered)

    def backward(g):
        dq = np.einsum("ij,ijk->ik", g, gathered)
        dtable = np.zeros_like(table.data)
        np.add.at(dtable, rel.reshape(-1), (g[:, :, None] * q.data[:, None, :]).reshape(-1, q.shape[1]))
        return (dq, dtable)

    return _make(out_data, (q, table), backward)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(fn: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` must be deterministic and return a scalar tensor; run inside
    verification_mode() so the graph is 64-bit.
    """
    if x.data.dtype != np.float64:
        raise ValueError("grad_check requires 64-bit tensors; wrap in verification_mode()")
    x.requires_grad = True
    x.zero_grad()
    fn(x).backward()
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)

    worst = 0.0
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        f_plus = float(fn(x).data)
        flat[i] = original - h
        f_minus = float(fn(x).data)
        flat[i] = original
        numeric = (f_plus - f_minus) / (2 * h)
        a = analytic.reshape(-1)[i]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
