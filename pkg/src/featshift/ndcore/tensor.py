"""
Dense tensors and the reverse-mode graph

A Tensor wraps a read-only numpy buffer of dtype float32 or float64. When a
Graph is active on the current thread, every differentiable operation whose
inputs require gradients appends a node to it; Graph.backward replays those
nodes in reverse to accumulate gradients on the leaves.

Example:
    >>> w = Tensor(2.0, requires_grad=True)
    >>> x = Tensor([1.0, 2.0, 3.0])
    >>> with Graph() as graph:
    ...     loss = (w * x).sum()
    >>> grads = graph.backward(loss)
    >>> grads[w]
    array(6.)
"""

import logging
import threading
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import GraphError, NumericalDomainError, ShapeMismatchError

logger = logging.getLogger(__name__)


SUPPORTED_DTYPES = ("float32", "float64")
MAX_RANK = 4

# |divisor| below this is a numerical-domain error, never clamped
SAFE_DIVISOR_FLOOR = {"float32": 1e-7, "float64": 1e-12}

BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_local = threading.local()


def _graph_stack() -> List["Graph"]:
    stack = getattr(_local, "graphs", None)
    if stack is None:
        stack = []
        _local.graphs = stack
    return stack


def current_graph() -> Optional["Graph"]:
    """Innermost active graph on this thread, or None when recording is off"""
    stack = _graph_stack()
    return stack[-1] if stack else None


def _resolve_dtype(data: Any, dtype: Optional[str]) -> str:
    if dtype is not None:
        name = np.dtype(dtype).name
    elif isinstance(data, np.ndarray) and data.dtype.name in SUPPORTED_DTYPES:
        name = data.dtype.name
    elif isinstance(data, Tensor):
        name = data.dtype
    else:
        name = "float64"
    if name not in SUPPORTED_DTYPES:
        raise ValueError(f"Unsupported dtype '{name}', expected one of {SUPPORTED_DTYPES}")
    return name


class Tensor:
    """
    Immutable dense array of up to four dimensions

    Args:
        data: Array-like values (copied)
        dtype: "float32" or "float64" (defaults to the input's float dtype, else float64)
        requires_grad: Whether Graph.backward should produce a gradient for this leaf
        name: Optional label used in checkpoints and error messages
    """

    __array_priority__ = 100

    def __init__(
        self,
        data: Any,
        dtype: Optional[str] = None,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        resolved = _resolve_dtype(data, dtype)
        array = np.array(data, dtype=resolved, copy=True)
        _validate_shape(array.shape)
        if not np.all(np.isfinite(array)):
            raise NumericalDomainError(
                "Tensor values must be finite",
                positions=np.argwhere(~np.isfinite(array)).tolist(),
            )
        array.setflags(write=False)
        self._data = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Adopt an already validated buffer without copying"""
        tensor = cls.__new__(cls)
        array.setflags(write=False)
        tensor._data = array
        tensor.requires_grad = requires_grad
        tensor.grad = None
        tensor.name = None
        return tensor

    # properties

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the underlying buffer"""
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self._data.shape)

    @property
    def dtype(self) -> str:
        return self._data.dtype.name

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return int(self._data.size)

    def numpy(self) -> np.ndarray:
        """Writable copy of the values"""
        return self._data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ShapeMismatchError("item() requires a single-element tensor", [self.shape])
        return float(self._data.reshape(-1)[0])

    def astype(self, dtype: str) -> "Tensor":
        """Explicit conversion; the result is a new leaf"""
        return Tensor(self._data, dtype=dtype, requires_grad=self.requires_grad)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self._data, requires_grad=False)

    # arithmetic sugar, all routed through ndcore.ops

    def __add__(self, other: Any) -> "Tensor":
        from . import ops

        return ops.elementwise("add", self, other)

    def __radd__(self, other: Any) -> "Tensor":
        from . import ops

        return ops.elementwise("add", self, other)

    def __sub__(self, other: Any) -> "Tensor":
        from . import ops

        return ops.elementwise("sub", self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        from . import ops

        return ops.elementwise("sub", ops.as_tensor(other, like=self), self)

    def __mul__(self, other: Any) -> "Tensor":
        from . import ops

        return ops.elementwise("mul", self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        from . import ops

        return ops.elementwise("mul", self, other)

    def __truediv__(self, other: Any) -> "Tensor":
        from . import ops

        return ops.elementwise("div", self, other)

    def __rtruediv__(self, other: Any) -> "Tensor":
        from . import ops

        return ops.elementwise("div", ops.as_tensor(other, like=self), self)

    def __neg__(self) -> "Tensor":
        from . import ops

        return ops.neg(self)

    def sum(self, axes: Optional[Sequence[Any]] = None) -> "Tensor":
        from . import ops

        return ops.reduce("sum", self, axes if axes is not None else tuple(range(self.ndim)))

    def mean(self, axes: Optional[Sequence[Any]] = None) -> "Tensor":
        from . import ops

        return ops.reduce("mean", self, axes if axes is not None else tuple(range(self.ndim)))

    def reshape(self, *shape: int) -> "Tensor":
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def __len__(self) -> int:
        if self.ndim == 0:
            raise TypeError("len() of a scalar tensor")
        return self.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        label = f" name={self.name!r}" if self.name else ""
        return f"<Tensor shape={list(self.shape)} dtype={self.dtype}{flag}{label}>"


def _validate_shape(shape: Tuple[int, ...]) -> None:
    if len(shape) > MAX_RANK:
        raise ShapeMismatchError(f"Tensors have at most {MAX_RANK} dimensions", [shape])
    if any(d <= 0 for d in shape):
        raise ShapeMismatchError("Tensor dimensions must be positive", [shape])


@dataclass
class Node:
    """One recorded operation: inputs, output and the rule mapping output grad to input grads"""

    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardRule


class Graph:
    """
    Ordered record of differentiable operations

    A Graph is single-owner: it records only ops executed on the thread that
    entered it, and backward() may be called exactly once.

    Example:
        >>> with Graph() as graph:
        ...     loss = model_loss(params)
        >>> grads = graph.backward(loss)
    """

    def __init__(self) -> None:
        self.nodes: List[Node] = []
        self._consumed = False

    @property
    def consumed(self) -> bool:
        return self._consumed

    def __enter__(self) -> "Graph":
        if self._consumed:
            raise GraphError("Graph already consumed by backward()")
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _graph_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(
        self, op: str, inputs: Sequence[Tensor], output: Tensor, backward: BackwardRule
    ) -> None:
        if self._consumed:
            raise GraphError("Cannot record on a consumed graph")
        self.nodes.append(Node(op=op, inputs=tuple(inputs), output=output, backward=backward))

    def backward(self, loss: Tensor) -> Dict[Tensor, np.ndarray]:
        """
        Accumulate gradients of a scalar loss into every gradient-requiring leaf

        Args:
            loss: Scalar tensor produced while this graph was active

        Returns:
            Mapping from each leaf tensor to its gradient (same shape and dtype)

        Raises:
            GraphError: If loss is not scalar, was not recorded here, or the
                graph has already been consumed
        """
        if self._consumed:
            raise GraphError("Graph already consumed by backward()")
        if loss.size != 1:
            raise GraphError(f"backward() needs a scalar loss, got shape {list(loss.shape)}")

        produced = {id(node.output) for node in self.nodes}
        if id(loss) not in produced:
            raise GraphError("Loss was not produced on this graph")

        grads: Dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
        leaves: Dict[int, Tensor] = {}

        for node in reversed(self.nodes):
            upstream = grads.pop(id(node.output), None)
            if upstream is None:
                continue
            input_grads = node.backward(upstream)
            for tensor, grad in zip(node.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if grad.shape != tensor.shape:
                    raise GraphError(
                        f"Backward rule of '{node.op}' produced gradient {grad.shape} "
                        f"for input {tensor.shape}"
                    )
                key = id(tensor)
                grads[key] = grads[key] + grad if key in grads else grad
                if key not in produced:
                    leaves[key] = tensor

        result: Dict[Tensor, np.ndarray] = {}
        for key, tensor in leaves.items():
            grad = np.asarray(grads.get(key, np.zeros(tensor.shape)), dtype=tensor.dtype)
            if not np.all(np.isfinite(grad)):
                raise NumericalDomainError(
                    "Non-finite gradient", positions=np.argwhere(~np.isfinite(grad)).tolist()
                )
            tensor.grad = grad if tensor.grad is None else tensor.grad + grad
            result[tensor] = grad

        logger.debug(f"[Graph] Backward over {len(self.nodes)} nodes, {len(result)} leaves")
        self._consumed = True
        self.nodes = []
        return result


def backward(loss: Tensor, graph: Optional[Graph] = None) -> Dict[Tensor, np.ndarray]:
    """Run backward on the given graph, or on the innermost active one"""
    graph = graph or current_graph()
    if graph is None:
        raise GraphError("No graph recorded; run the forward pass inside 'with Graph()'")
    return graph.backward(loss)
