"""
Differentiable tensor operations

Every public function here computes its result with numpy, validates that the
result is finite, and records a backward rule on the active Graph when any
input requires gradients.

Broadcasting is deliberately narrow: operands must have equal shapes, or the
smaller one must be a scalar, a [B,C] tensor against [B,C,...], or a [C]
vector against [B,C,...].
"""

import logging
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import (
    DtypeMismatchError,
    EmptyReductionError,
    NumericalDomainError,
    ShapeMismatchError,
)
from .tensor import SAFE_DIVISOR_FLOOR, BackwardRule, Tensor, current_graph

logger = logging.getLogger(__name__)


ELEMENTWISE_OPS = ("add", "sub", "mul", "div")
REDUCE_OPS = ("sum", "mean", "variance")

# Named axes for [B,C,H,W] tensors
AXIS_NAMES = {"B": 0, "C": 1, "H": 2, "W": 3}
SPATIAL_AXES = (2, 3)
BATCH_AXIS = (0,)

Operand = Union[Tensor, float, int]


def as_tensor(value: Operand, like: Tensor) -> Tensor:
    """Wrap a python scalar as a constant tensor with the dtype of `like`"""
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _emit(
    op: str,
    inputs: Sequence[Tensor],
    result: np.ndarray,
    backward: BackwardRule,
    dtype: str,
) -> Tensor:
    result = np.asarray(result, dtype=dtype)
    if not np.all(np.isfinite(result)):
        raise NumericalDomainError(
            f"Operation '{op}' produced non-finite values",
            positions=np.argwhere(~np.isfinite(result)).tolist(),
        )
    graph = current_graph()
    tracked = graph is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(result, requires_grad=tracked)
    if tracked:
        graph.record(op, inputs, out, backward)
    return out


def _check_dtypes(*tensors: Tensor) -> str:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) != 1:
        raise DtypeMismatchError(f"Operands have mixed dtypes {sorted(dtypes)}; cast explicitly")
    return dtypes.pop()


# -----------------------------------------------------------------------------
# broadcasting
# -----------------------------------------------------------------------------


def _broadcast_view(small: Tuple[int, ...], target: Tuple[int, ...]) -> Optional[Tuple[int, ...]]:
    """Shape `small` must be reshaped to for numpy broadcasting against `target`, or None"""
    if small == target:
        return small
    if small == ():
        return ()
    extra = len(target) - len(small)
    if len(small) == 2 and len(target) >= 3 and small == target[:2]:
        return small + (1,) * extra
    if len(small) == 1 and len(target) >= 2 and small[0] == target[1]:
        return (1, small[0]) + (1,) * (len(target) - 2)
    return None


def _resolve_broadcast(a: Tensor, b: Tensor) -> Tuple[Tuple[int, ...], np.ndarray, np.ndarray]:
    if _broadcast_view(b.shape, a.shape) is not None:
        target = a.shape
    elif _broadcast_view(a.shape, b.shape) is not None:
        target = b.shape
    else:
        raise ShapeMismatchError("Shapes are not broadcast-compatible", [a.shape, b.shape])
    a_view = a.data.reshape(_broadcast_view(a.shape, target))
    b_view = b.data.reshape(_broadcast_view(b.shape, target))
    return target, a_view, b_view


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a full-size gradient back down to an operand's shape"""
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    if len(shape) == 2 and grad.shape[:2] == shape:
        return grad.sum(axis=tuple(range(2, grad.ndim)))
    axes = (0,) + tuple(range(2, grad.ndim))
    return grad.sum(axis=axes)


def broadcast_to(x: Tensor, shape: Sequence[int]) -> np.ndarray:
    """Explicit tile of x to `shape` under the broadcasting rules (constant, no graph)"""
    view = _broadcast_view(x.shape, tuple(shape))
    if view is None:
        raise ShapeMismatchError("Shapes are not broadcast-compatible", [x.shape, tuple(shape)])
    return np.broadcast_to(x.data.reshape(view), tuple(shape)).copy()


# -----------------------------------------------------------------------------
# elementwise
# -----------------------------------------------------------------------------


def elementwise(op: str, a: Operand, b: Operand) -> Tensor:
    """
    Binary elementwise arithmetic with narrow broadcasting

    Args:
        op: One of "add", "sub", "mul", "div"
        a: Left operand (tensor or python scalar)
        b: Right operand (tensor or python scalar)

    Returns:
        Result tensor with the broadcast shape

    Raises:
        ShapeMismatchError: If shapes cannot be broadcast
        DtypeMismatchError: If the tensors have different dtypes
        NumericalDomainError: If a divisor falls below the safeguard floor
    """
    if op not in ELEMENTWISE_OPS:
        raise ValueError(f"Unknown elementwise op '{op}', expected one of {ELEMENTWISE_OPS}")
    if not isinstance(a, Tensor):
        if not isinstance(b, Tensor):
            raise TypeError("elementwise() needs at least one Tensor operand")
        a = as_tensor(a, like=b)
    b = as_tensor(b, like=a)
    dtype = _check_dtypes(a, b)
    target, av, bv = _resolve_broadcast(a, b)
    a_shape, b_shape = a.shape, b.shape

    if op == "add":
        result = av + bv

        def backward(g: np.ndarray):
            return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

    elif op == "sub":
        result = av - bv

        def backward(g: np.ndarray):
            return _unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)

    elif op == "mul":
        result = av * bv

        def backward(g: np.ndarray):
            return _unbroadcast(g * bv, a_shape), _unbroadcast(g * av, b_shape)

    else:
        floor = SAFE_DIVISOR_FLOOR[dtype]
        small = np.abs(b.data) < floor
        if np.any(small):
            raise NumericalDomainError(
                f"Division domain: |divisor| < {floor:g}", positions=np.argwhere(small).tolist()
            )
        result = av / bv

        def backward(g: np.ndarray):
            grad_a = g / bv
            grad_b = -g * av / (bv * bv)
            return _unbroadcast(grad_a, a_shape), _unbroadcast(grad_b, b_shape)

    return _emit(op, (a, b), np.broadcast_to(result, target), backward, dtype)


def add(a: Operand, b: Operand) -> Tensor:
    return elementwise("add", a, b)


def sub(a: Operand, b: Operand) -> Tensor:
    return elementwise("sub", a, b)


def mul(a: Operand, b: Operand) -> Tensor:
    return elementwise("mul", a, b)


def div(a: Operand, b: Operand) -> Tensor:
    return elementwise("div", a, b)


# -----------------------------------------------------------------------------
# unary
# -----------------------------------------------------------------------------


def neg(x: Tensor) -> Tensor:
    return _emit("neg", (x,), -x.data, lambda g: (-g,), x.dtype)


def sqrt(x: Tensor) -> Tensor:
    """Square root; negative inputs are a numerical-domain error"""
    if np.any(x.data < 0):
        raise NumericalDomainError(
            "sqrt of negative value", positions=np.argwhere(x.data < 0).tolist()
        )
    out = np.sqrt(x.data)

    def backward(g: np.ndarray):
        with np.errstate(divide="ignore"):
            return (g * 0.5 / out,)

    return _emit("sqrt", (x,), out, backward, x.dtype)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _emit("relu", (x,), np.where(mask, x.data, 0), lambda g: (g * mask,), x.dtype)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _emit("tanh", (x,), out, lambda g: (g * (1 - out * out),), x.dtype)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _emit("exp", (x,), out, lambda g: (g * out,), x.dtype)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise NumericalDomainError(
            "log of non-positive value", positions=np.argwhere(x.data <= 0).tolist()
        )
    return _emit("log", (x,), np.log(x.data), lambda g: (g / x.data,), x.dtype)


def stop_gradient(x: Tensor) -> Tensor:
    """Same values, treated as a constant by backward"""
    return x.detach()


# -----------------------------------------------------------------------------
# reductions and movement
# -----------------------------------------------------------------------------


def normalize_axes(x: Tensor, axes: Any) -> Tuple[int, ...]:
    """Resolve ints or axis names ("B","C","H","W") to a sorted tuple of axis indices"""
    if isinstance(axes, (int, str)):
        axes = (axes,)
    resolved = []
    for axis in axes:
        if isinstance(axis, str):
            if x.ndim != 4 or axis not in AXIS_NAMES:
                raise ValueError(f"Axis name '{axis}' only valid for [B,C,H,W] tensors")
            axis = AXIS_NAMES[axis]
        if not -x.ndim <= axis < x.ndim:
            raise ValueError(f"Axis {axis} out of range for shape {list(x.shape)}")
        resolved.append(axis % x.ndim)
    if len(set(resolved)) != len(resolved):
        raise ValueError(f"Repeated axes {axes}")
    return tuple(sorted(resolved))


def reduce(op: str, x: Tensor, axes: Any, divisor: str = "N", keepdims: bool = False) -> Tensor:
    """
    Reduce over a set of axes

    Args:
        op: "sum", "mean" or "variance"
        x: Input tensor
        axes: Axis indices or names; reduced axes are removed unless keepdims
        divisor: "N" (population, default) or "N-1" for variance
        keepdims: Keep reduced axes with length 1

    Raises:
        EmptyReductionError: If no axes are given
    """
    if op not in REDUCE_OPS:
        raise ValueError(f"Unknown reduce op '{op}', expected one of {REDUCE_OPS}")
    if divisor not in ("N", "N-1"):
        raise ValueError(f"divisor must be 'N' or 'N-1', got {divisor!r}")
    axes_t = normalize_axes(x, axes)
    if not axes_t:
        raise EmptyReductionError("Reduction over an empty axis set")

    count = int(np.prod([x.shape[a] for a in axes_t]))
    in_shape = x.shape

    def expand(g: np.ndarray) -> np.ndarray:
        if keepdims:
            return g
        return np.expand_dims(g, axis=axes_t)

    if op == "sum":
        out = x.data.sum(axis=axes_t, keepdims=keepdims)

        def backward(g: np.ndarray):
            return (np.broadcast_to(expand(g), in_shape).copy(),)

    elif op == "mean":
        out = x.data.mean(axis=axes_t, keepdims=keepdims)

        def backward(g: np.ndarray):
            return (np.broadcast_to(expand(g) / count, in_shape).copy(),)

    else:
        denom = count if divisor == "N" else count - 1
        if denom < 1:
            raise NumericalDomainError("Variance with divisor N-1 needs at least two elements")
        # shifting by the first element keeps constant inputs at exactly zero variance
        first = tuple(slice(0, 1) if ax in axes_t else slice(None) for ax in range(x.ndim))
        shifted = x.data - x.data[first]
        centered = shifted - shifted.mean(axis=axes_t, keepdims=True)
        out = (centered * centered).sum(axis=axes_t, keepdims=keepdims) / denom

        def backward(g: np.ndarray):
            return (expand(g) * 2.0 * centered / denom,)

    return _emit(op, (x,), out, backward, x.dtype)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    in_shape = x.shape
    out = x.data.reshape(tuple(shape))
    return _emit("reshape", (x,), out, lambda g: (g.reshape(in_shape),), x.dtype)


def index_select(x: Tensor, indices: Sequence[int]) -> Tensor:
    """Gather rows along the batch axis (x[indices]); gradients scatter-add back"""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0 or np.any(idx < 0) or np.any(idx >= x.shape[0]):
        raise ShapeMismatchError(
            f"Indices must be a non-empty 1-D selection of 0..{x.shape[0] - 1}", [x.shape]
        )
    in_shape = x.shape

    def backward(g: np.ndarray):
        grad = np.zeros(in_shape, dtype=g.dtype)
        np.add.at(grad, idx, g)
        return (grad,)

    return _emit("index_select", (x,), x.data[idx], backward, x.dtype)


def global_avg_pool(x: Tensor) -> Tensor:
    """[B,C,H,W] -> [B,C,1,1] spatial mean"""
    if x.ndim != 4:
        raise ShapeMismatchError("global_avg_pool expects [B,C,H,W]", [x.shape])
    return reduce("mean", x, SPATIAL_AXES, keepdims=True)


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], int(np.prod(x.shape[1:]))))


# -----------------------------------------------------------------------------
# layers
# -----------------------------------------------------------------------------


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def conv2d(
    x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0
) -> Tensor:
    """
    Direct 2-D convolution (cross-correlation) over [B,C,H,W] inputs

    Args:
        x: Input [B, C_in, H, W]
        weight: Kernel [C_out, C_in, kH, kW]
        bias: Optional [C_out]
        stride: Step between windows (>= 1)
        pad: Zero padding on every spatial border

    Returns:
        Output [B, C_out, H_out, W_out] with H_out = (H + 2*pad - kH) // stride + 1

    Raises:
        ShapeMismatchError: If channel counts disagree or the kernel does not fit
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeMismatchError("conv2d expects x [B,C,H,W] and weight [O,C,kH,kW]", [x.shape, weight.shape])
    if stride < 1 or pad < 0:
        raise ValueError(f"Invalid stride={stride} or pad={pad}")
    batch, c_in, height, width = x.shape
    c_out, w_in, kh, kw = weight.shape
    if w_in != c_in:
        raise ShapeMismatchError("conv2d channel mismatch", [x.shape, weight.shape])
    if kh > height + 2 * pad or kw > width + 2 * pad:
        raise ShapeMismatchError("Kernel larger than padded input", [x.shape, weight.shape])
    if bias is not None and bias.shape != (c_out,):
        raise ShapeMismatchError("conv2d bias must be [C_out]", [bias.shape, weight.shape])
    tensors = (x, weight) if bias is None else (x, weight, bias)
    dtype = _check_dtypes(*tensors)

    h_out = conv_output_size(height, kh, stride, pad)
    w_out = conv_output_size(width, kw, stride, pad)
    padded = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :h_out, :w_out]

    out = np.einsum("bchwij,ocij->bohw", windows, weight.data, optimize=True)
    if bias is not None:
        out = out + bias.data.reshape(1, c_out, 1, 1)

    w_data = weight.data
    padded_shape = padded.shape

    def backward(g: np.ndarray):
        grad_w = np.einsum("bohw,bchwij->ocij", g, windows, optimize=True)
        grad_padded = np.zeros(padded_shape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                grad_padded[
                    :, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride
                ] += np.einsum("bohw,oc->bchw", g, w_data[:, :, i, j], optimize=True)
        grad_x = grad_padded[:, :, pad : pad + height, pad : pad + width]
        grads = [grad_x, grad_w]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return _emit("conv2d", tensors, out, backward, dtype)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x [B,F] @ weight[K,F].T + bias[K]"""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeMismatchError("linear expects x [B,F] and weight [K,F]", [x.shape, weight.shape])
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeMismatchError("linear bias must be [K]", [bias.shape, weight.shape])
    tensors = (x, weight) if bias is None else (x, weight, bias)
    dtype = _check_dtypes(*tensors)
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g: np.ndarray):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return _emit("linear", tensors, out, backward, dtype)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)"""
    targets = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeMismatchError("cross_entropy expects logits [B,K] and labels [B]", [logits.shape, targets.shape])
    if np.any(targets < 0) or np.any(targets >= logits.shape[1]):
        raise ValueError(f"Labels must lie in 0..{logits.shape[1] - 1}")
    batch = logits.shape[0]
    logp = log_softmax(logits.data)
    loss = -logp[np.arange(batch), targets].mean()

    def backward(g: np.ndarray):
        grad = np.exp(logp)
        grad[np.arange(batch), targets] -= 1.0
        return (grad * (g / batch),)

    return _emit("cross_entropy", (logits,), np.asarray(loss), backward, logits.dtype)


def total(x: Tensor) -> Tensor:
    """Sum of every element (scalar)"""
    return reduce("sum", x, tuple(range(x.ndim)))
