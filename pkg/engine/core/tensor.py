"""
Dense float64 tensors with reverse-mode differentiation.

Every op records a closure mapping the upstream gradient to one gradient per
parent. `Tensor.backward` replays those closures in reverse topological
order; leaves that require grad accumulate into `.grad`, so calling backward
twice after one forward doubles the stored gradients.

Broadcasting is limited to a bias vector added over the last axis.
"""
import threading

from engine.core.commons import *


_grad_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


class no_grad:
    """Context manager that stops ops from recording closures (per thread)."""

    def __enter__(self):
        self._previous = is_grad_enabled()
        _grad_state.enabled = False
        return self

    def __exit__(self, *exc):
        _grad_state.enabled = self._previous
        return False


class Tensor:
    __array_priority__ = 100  # keep ndarray @ Tensor routed to Tensor.__rmatmul__

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None

    @classmethod
    def _from_op(cls, data, parents, backward):
        """Builds an op result; the closure is only kept when a parent is tracked."""
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.grad = None
        track = is_grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    # Introspection

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Differentiation

    def _topological_order(self) -> list:
        order, visited = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self) -> None:
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward() on a tensor that no tracked parameter reaches")

        upstream = {id(self): np.ones_like(self.data)}
        for node in reversed(self._topological_order()):
            g = upstream.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, parent_grad in zip(node._parents, node._backward(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                upstream[key] = parent_grad if key not in upstream else upstream[key] + parent_grad

    # Operator sugar

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def relu(self):
        return relu(self)


class Parameter(Tensor):
    """A trainable leaf tensor with a dotted path name, e.g. ``enc.3.ffn.w1.weight``."""

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# Elementwise and structural ops

def add(a, b) -> Tensor:
    """Same-shape addition, or a 1-D bias added over the last axis of ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        bias = False
    elif b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        bias = True
    else:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not match")

    def _backward(g):
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if bias else g
        return g, gb

    return Tensor._from_op(a.data + b.data, (a, b), _backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        bias = False
    elif b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        bias = True
    else:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} do not match")

    def _backward(g):
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if bias else g
        return g, -gb

    return Tensor._from_op(a.data - b.data, (a, b), _backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not match")

    def _backward(g):
        return g * b.data, g * a.data

    return Tensor._from_op(a.data * b.data, (a, b), _backward)


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)
    factor = float(factor)
    return Tensor._from_op(a.data * factor, (a,), lambda g: (g * factor,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    original = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {original} as {tuple(shape)}") from exc
    return Tensor._from_op(out, (a,), lambda g: (g.reshape(original),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._from_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def tensor_sum(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(np.sum(a.data), (a,), lambda g: (np.full(a.shape, float(g)),))


def tensor_mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return Tensor._from_op(np.mean(a.data), (a,), lambda g: (np.full(a.shape, float(g) / n),))


def matmul(a, b) -> Tensor:
    """
    Matrix product over the last two axes.

    ``b`` may be a plain matrix applied to every leading index of ``a``
    (a linear layer), otherwise both operands need the same leading extents.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: leading extents differ between {a.shape} and {b.shape}")

    def _backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            if b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ga, gb

    return Tensor._from_op(np.matmul(a.data, b.data), (a, b), _backward)


def concat_last(parts: Sequence) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat_last: needs at least one part")
    leading = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != leading:
            shapes = ", ".join(str(q.shape) for q in parts)
            raise DimensionError(f"concat_last: leading extents differ among {shapes}")
    cuts = np.cumsum([p.shape[-1] for p in parts])[:-1]

    def _backward(g):
        return tuple(np.split(g, cuts, axis=-1))

    return Tensor._from_op(np.concatenate([p.data for p in parts], axis=-1), parts, _backward)


# Neural network ops

def relu(x) -> Tensor:
    # Subgradient at 0 is 0
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor._from_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def softmax_last(x) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / np.sum(e, axis=-1, keepdims=True)

    def _backward(g):
        return (s * (g - np.sum(g * s, axis=-1, keepdims=True)),)

    return Tensor._from_op(s, (x,), _backward)


def layer_norm(x, gamma, beta, eps: float = LAYER_NORM_EPS) -> Tensor:
    if eps <= 0:
        raise ContractError(f"layer_norm: eps must be positive, got {eps}")
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    n = x.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise DimensionError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} for input {x.shape}")

    centered = x.data - np.mean(x.data, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(np.mean(centered ** 2, axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std

    def _backward(g):
        dxhat = g * gamma.data
        dx = inv_std / n * (
            n * dxhat
            - np.sum(dxhat, axis=-1, keepdims=True)
            - xhat * np.sum(dxhat * xhat, axis=-1, keepdims=True)
        )
        dgamma = (g * xhat).reshape(-1, n).sum(axis=0)
        dbeta = g.reshape(-1, n).sum(axis=0)
        return dx, dgamma, dbeta

    return Tensor._from_op(xhat * gamma.data + beta.data, (x, gamma, beta), _backward)


def embedding_lookup(table, ids) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = ids[(ids < 0) | (ids >= vocab)][0]
        raise SpeakerIndexError(f"embedding id {int(bad)} outside table of {vocab} rows")

    def _backward(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return Tensor._from_op(table.data[ids], (table,), _backward)


def dropout(x, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p == 0."""
    x = as_tensor(x)
    if p <= 0.0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return Tensor._from_op(x.data * mask, (x,), lambda g: (g * mask,))


def mse_loss(pred, target) -> Tensor:
    """Mean over every element of the squared difference."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def _backward(g):
        grad = (2.0 * float(g) / n) * diff
        return grad, -grad

    return Tensor._from_op(np.mean(diff ** 2), (pred, target), _backward)


def cross_entropy(logits, targets) -> Tensor:
    """Mean softmax cross-entropy of (batch, classes) logits against integer targets."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise SpeakerIndexError(f"cross_entropy: class id outside [0, {logits.shape[1]})")

    shifted = logits.data - np.max(logits.data, axis=1, keepdims=True)
    log_probs = shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    rows = np.arange(targets.size)
    m = targets.size

    def _backward(g):
        grad = np.exp(log_probs)
        grad[rows, targets] -= 1.0
        return (grad * (float(g) / m),)

    return Tensor._from_op(-np.mean(log_probs[rows, targets]), (logits,), _backward)
