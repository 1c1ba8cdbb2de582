"""Reverse-mode automatic differentiation over dense float64 arrays

Each differentiable operation is a ``Function`` with a forward rule over
numpy arrays and a backward rule returning one gradient per input. Calling
``Function.apply`` records a node on the output tensor; ``Tape.from_root``
orders the recorded graph topologically and ``Tape.backward`` walks it once in
reverse, summing gradients at fan-out.

Recording is disabled inside ``no_grad()`` (per thread), which is how
inference runs concurrently over scenarios.
"""

import threading
from contextlib import contextmanager
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.config.settings import get_settings
from src.core.errors import NumericError, ShapeError

ZERO_NORM = 1e-9
LAYER_NORM_EPS = 1e-5

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording in the current thread"""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class Tensor:
    """Array value with an optional gradient and graph node"""

    __array_ufunc__ = None

    def __init__(self, data: Any, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data.astype(np.float64, copy=False)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node: Optional["Node"] = None

    # -- introspection -------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        Tape.from_root(self).backward(grad)

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"<Tensor shape={self.shape} requires_grad={self.requires_grad}{label}>"

    # -- operators -----------------------------------------------------------

    def __add__(self, other):
        return Add.apply(self, other)

    def __radd__(self, other):
        return Add.apply(other, self)

    def __sub__(self, other):
        return Sub.apply(self, other)

    def __rsub__(self, other):
        return Sub.apply(other, self)

    def __mul__(self, other):
        return Mul.apply(self, other)

    def __rmul__(self, other):
        return Mul.apply(other, self)

    def __truediv__(self, other):
        return Div.apply(self, other)

    def __neg__(self):
        return Neg.apply(self)

    def __matmul__(self, other):
        return MatMul.apply(self, other)

    def __rmatmul__(self, other):
        return MatMul.apply(other, self)

    def __getitem__(self, key):
        return Index.apply(self, key=key)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Transpose.apply(self, axes=axes or None)

    def swapaxes(self, axis1: int, axis2: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[axis1], axes[axis2] = axes[axis2], axes[axis1]
        return Transpose.apply(self, axes=tuple(axes))

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def relu(self) -> "Tensor":
        return ReLU.apply(self)


class Parameter(Tensor):
    """Trainable leaf tensor"""

    def __init__(self, data: Any, name: Optional[str] = None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)


TensorLike = Union[Tensor, np.ndarray, float, int]


def as_tensor(value: TensorLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


class Context:
    """Scratch space a forward rule leaves for its backward rule"""

    def __init__(self):
        self.saved: Dict[str, Any] = {}

    def save(self, **kwargs) -> None:
        self.saved.update(kwargs)

    def __getattr__(self, item: str) -> Any:
        try:
            return self.__dict__["saved"][item]
        except KeyError as e:
            raise AttributeError(item) from e


class Node:
    """Recorded application of a Function"""

    __slots__ = ("function", "ctx", "inputs")

    def __init__(self, function: type, ctx: Context, inputs: Sequence[Tensor]):
        self.function = function
        self.ctx = ctx
        self.inputs = tuple(inputs)


class Function:
    """Differentiable operation with a registered backward rule"""

    @staticmethod
    def forward(ctx: Context, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: TensorLike, **kwargs) -> Tensor:
        tensors = [as_tensor(x) for x in inputs]
        ctx = Context()
        out_data = cls.forward(ctx, *[t.data for t in tensors], **kwargs)
        if get_settings().check_finite and not np.all(np.isfinite(out_data)):
            raise NumericError(f"{cls.__name__} produced non-finite values")
        out = Tensor(out_data)
        if is_grad_enabled() and any(t.requires_grad for t in tensors):
            out.requires_grad = True
            out._node = Node(cls, ctx, tensors)
        return out


class Tape:
    """Recorded operations reachable from a root, in topological order"""

    def __init__(self, order: List[Tensor]):
        self.order = order

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in visited:
                continue
            visited.add(id(tensor))
            stack.append((tensor, True))
            if tensor._node is not None:
                for parent in tensor._node.inputs:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.order)

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Propagate d(root)/d(leaf) into every requires_grad leaf's .grad"""
        if not self.order:
            return
        root = self.order[-1]
        if grad is None:
            if root.data.size != 1:
                raise ShapeError(f"backward from a non-scalar of shape {root.shape} needs a seed gradient")
            grad = np.ones_like(root.data)
        grads: Dict[int, np.ndarray] = {id(root): np.asarray(grad, dtype=np.float64)}
        for tensor in reversed(self.order):
            g = grads.pop(id(tensor), None)
            if g is None:
                continue
            node = tensor._node
            if node is None:
                tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g
                continue
            input_grads = node.function.backward(node.ctx, g)
            for parent, parent_grad in zip(node.inputs, input_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + parent_grad
                else:
                    grads[key] = parent_grad


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to an operand's shape"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from e


# ============================================================================
# Elementwise arithmetic
# ============================================================================

class Add(Function):
    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast(a, b, "add")
        ctx.save(a_shape=a.shape, b_shape=b.shape)
        return a + b

    @staticmethod
    def backward(ctx, grad):
        return unbroadcast(grad, ctx.a_shape), unbroadcast(grad, ctx.b_shape)


class Sub(Function):
    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast(a, b, "sub")
        ctx.save(a_shape=a.shape, b_shape=b.shape)
        return a - b

    @staticmethod
    def backward(ctx, grad):
        return unbroadcast(grad, ctx.a_shape), unbroadcast(-grad, ctx.b_shape)


class Neg(Function):
    @staticmethod
    def forward(ctx, a):
        return -a

    @staticmethod
    def backward(ctx, grad):
        return (-grad,)


class Mul(Function):
    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast(a, b, "mul")
        ctx.save(a=a, b=b)
        return a * b

    @staticmethod
    def backward(ctx, grad):
        return unbroadcast(grad * ctx.b, ctx.a.shape), unbroadcast(grad * ctx.a, ctx.b.shape)


class Div(Function):
    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast(a, b, "div")
        ctx.save(a=a, b=b)
        return a / b

    @staticmethod
    def backward(ctx, grad):
        a, b = ctx.a, ctx.b
        return unbroadcast(grad / b, a.shape), unbroadcast(-grad * a / (b * b), b.shape)


class ReLU(Function):
    @staticmethod
    def forward(ctx, a):
        mask = a > 0
        ctx.save(mask=mask)
        return np.where(mask, a, 0.0)

    @staticmethod
    def backward(ctx, grad):
        return (grad * ctx.mask,)


class Huber(Function):
    """Elementwise Huber penalty with threshold delta"""

    @staticmethod
    def forward(ctx, a, delta=1.0):
        magnitude = np.abs(a)
        quadratic = magnitude <= delta
        ctx.save(a=a, quadratic=quadratic, delta=delta)
        return np.where(quadratic, 0.5 * a * a, delta * (magnitude - 0.5 * delta))

    @staticmethod
    def backward(ctx, grad):
        local = np.where(ctx.quadratic, ctx.a, ctx.delta * np.sign(ctx.a))
        return (grad * local,)


class WrapAngle(Function):
    """Wrap into (-pi, pi]; the derivative is 1 almost everywhere"""

    @staticmethod
    def forward(ctx, a):
        return np.pi - np.mod(np.pi - a, 2.0 * np.pi)

    @staticmethod
    def backward(ctx, grad):
        return (grad,)


class Norm(Function):
    """Euclidean norm over the last axis; zero gradient at the origin"""

    @staticmethod
    def forward(ctx, a):
        if a.shape[-1] == 2:
            n = np.hypot(a[..., 0], a[..., 1])
        else:
            n = np.sqrt(np.sum(a * a, axis=-1))
        ctx.save(a=a, n=n)
        return n

    @staticmethod
    def backward(ctx, grad):
        n = ctx.n
        safe = n >= ZERO_NORM
        scale = np.where(safe, grad / np.where(safe, n, 1.0), 0.0)
        return (ctx.a * scale[..., None],)


class Atan2(Function):
    """atan2(y, x) that is 0 with zero gradient when hypot(x, y) < 1e-9"""

    @staticmethod
    def forward(ctx, y, x):
        _check_broadcast(y, x, "atan2")
        r2 = x * x + y * y
        safe = np.hypot(x, y) >= ZERO_NORM
        ctx.save(x=x, y=y, r2=np.where(safe, r2, 1.0), safe=safe)
        return np.where(safe, np.arctan2(y, x), 0.0)

    @staticmethod
    def backward(ctx, grad):
        g = np.where(ctx.safe, grad / ctx.r2, 0.0)
        return unbroadcast(g * ctx.x, ctx.y.shape), unbroadcast(-g * ctx.y, ctx.x.shape)


# ============================================================================
# Linear algebra and shape
# ============================================================================

class MatMul(Function):
    @staticmethod
    def forward(ctx, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
        try:
            out = np.matmul(a, b)
        except ValueError as e:
            raise ShapeError(f"matmul: incompatible batch shapes {a.shape} @ {b.shape}") from e
        ctx.save(a=a, b=b)
        return out

    @staticmethod
    def backward(ctx, grad):
        a, b = ctx.a, ctx.b
        grad_a = np.matmul(grad, np.swapaxes(b, -1, -2))
        grad_b = np.matmul(np.swapaxes(a, -1, -2), grad)
        return unbroadcast(grad_a, a.shape), unbroadcast(grad_b, b.shape)


class Concat(Function):
    @staticmethod
    def forward(ctx, *arrays, axis=-1):
        try:
            out = np.concatenate(arrays, axis=axis)
        except ValueError as e:
            raise ShapeError(f"concat: {e}") from e
        ctx.save(sizes=[x.shape[axis] for x in arrays], axis=axis)
        return out

    @staticmethod
    def backward(ctx, grad):
        splits = np.cumsum(ctx.sizes)[:-1]
        return tuple(np.split(grad, splits, axis=ctx.axis))


def _is_basic_index(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None for p in parts)


class Index(Function):
    """Basic or advanced indexing; the backward scatters with add.at"""

    @staticmethod
    def forward(ctx, a, key=None):
        ctx.save(shape=a.shape, key=key)
        try:
            return np.array(a[key], dtype=np.float64)
        except IndexError as e:
            raise ShapeError(f"index: {e}") from e

    @staticmethod
    def backward(ctx, grad):
        out = np.zeros(ctx.shape, dtype=np.float64)
        if _is_basic_index(ctx.key):
            out[ctx.key] += grad
        else:
            np.add.at(out, ctx.key, grad)
        return (out,)


class Reshape(Function):
    @staticmethod
    def forward(ctx, a, shape=()):
        ctx.save(shape=a.shape)
        try:
            return a.reshape(shape)
        except ValueError as e:
            raise ShapeError(f"reshape: cannot reshape {a.shape} into {shape}") from e

    @staticmethod
    def backward(ctx, grad):
        return (grad.reshape(ctx.shape),)


class Transpose(Function):
    @staticmethod
    def forward(ctx, a, axes=None):
        if axes is None:
            axes = tuple(reversed(range(a.ndim)))
        ctx.save(inverse=tuple(np.argsort(axes)))
        return np.transpose(a, axes)

    @staticmethod
    def backward(ctx, grad):
        return (np.transpose(grad, ctx.inverse),)


class Sum(Function):
    @staticmethod
    def forward(ctx, a, axis=None, keepdims=False):
        ctx.save(shape=a.shape, axis=axis, keepdims=keepdims)
        return np.asarray(np.sum(a, axis=axis, keepdims=keepdims), dtype=np.float64)

    @staticmethod
    def backward(ctx, grad):
        if ctx.axis is not None and not ctx.keepdims:
            grad = np.expand_dims(grad, ctx.axis)
        return (np.broadcast_to(grad, ctx.shape).copy(),)


class Mean(Function):
    @staticmethod
    def forward(ctx, a, axis=None, keepdims=False):
        count = a.size if axis is None else int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))
        ctx.save(shape=a.shape, axis=axis, keepdims=keepdims, count=count)
        return np.asarray(np.mean(a, axis=axis, keepdims=keepdims), dtype=np.float64)

    @staticmethod
    def backward(ctx, grad):
        if ctx.axis is not None and not ctx.keepdims:
            grad = np.expand_dims(grad, ctx.axis)
        return (np.broadcast_to(grad / ctx.count, ctx.shape).copy(),)


# ============================================================================
# Normalization
# ============================================================================

class Softmax(Function):
    """Softmax along an axis restricted to ``mask``; empty rows give zeros"""

    @staticmethod
    def forward(ctx, a, axis=-1, mask=None):
        if mask is None:
            mask = np.ones(a.shape, dtype=bool)
        mask = np.broadcast_to(mask, a.shape)
        if a.shape[axis] == 0:
            ctx.save(y=a.copy(), axis=axis)
            return a.copy()
        shifted = np.where(mask, a, -np.inf)
        peak = np.max(shifted, axis=axis, keepdims=True)
        peak = np.where(np.isfinite(peak), peak, 0.0)
        e = np.where(mask, np.exp(np.where(mask, a - peak, 0.0)), 0.0)
        total = np.sum(e, axis=axis, keepdims=True)
        y = np.where(total > 0, e / np.where(total > 0, total, 1.0), 0.0)
        ctx.save(y=y, axis=axis)
        return y

    @staticmethod
    def backward(ctx, grad):
        y = ctx.y
        inner = np.sum(grad * y, axis=ctx.axis, keepdims=True)
        return (y * (grad - inner),)


class LayerNormalize(Function):
    """Zero-mean unit-variance normalization over the last axis"""

    @staticmethod
    def forward(ctx, a, eps=LAYER_NORM_EPS):
        mu = a.mean(axis=-1, keepdims=True)
        centered = a - mu
        inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
        xhat = centered * inv_std
        ctx.save(xhat=xhat, inv_std=inv_std)
        return xhat

    @staticmethod
    def backward(ctx, grad):
        xhat, inv_std = ctx.xhat, ctx.inv_std
        g_mean = grad.mean(axis=-1, keepdims=True)
        gx_mean = (grad * xhat).mean(axis=-1, keepdims=True)
        return (inv_std * (grad - g_mean - xhat * gx_mean),)


# ============================================================================
# Functional helpers
# ============================================================================

def add(a: TensorLike, b: TensorLike) -> Tensor:
    return Add.apply(a, b)


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    return MatMul.apply(a, b)


def concat(tensors: Sequence[TensorLike], axis: int = -1) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def relu(a: TensorLike) -> Tensor:
    return ReLU.apply(a)


def softmax(a: TensorLike, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    return Softmax.apply(a, axis=axis, mask=mask)


def layer_norm(a: TensorLike, gain: Optional[TensorLike] = None, bias: Optional[TensorLike] = None) -> Tensor:
    out = LayerNormalize.apply(a)
    if gain is not None:
        out = out * gain
    if bias is not None:
        out = out + bias
    return out


def huber(a: TensorLike, delta: float = 1.0) -> Tensor:
    return Huber.apply(a, delta=delta)


def mean(a: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    return Mean.apply(a, axis=axis, keepdims=keepdims)


def norm(a: TensorLike) -> Tensor:
    return Norm.apply(a)


def atan2(y: TensorLike, x: TensorLike) -> Tensor:
    return Atan2.apply(y, x)


def wrap_angle(a: TensorLike) -> Tensor:
    return WrapAngle.apply(a)


def expand_dims(a: Tensor, axis: int) -> Tensor:
    shape = list(a.shape)
    if axis < 0:
        axis = len(shape) + 1 + axis
    shape.insert(axis, 1)
    return a.reshape(tuple(shape))
