"""
Tensor, Tape and Function - a define-by-run reverse-mode differentiation core
"""
import contextvars
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from ..exceptions import RankError, TapeError

logger = structlog.get_logger(__name__)

DEFAULT_DTYPE = np.float32
CHECK_DTYPE = np.float64

_active_tape: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar("active_tape", default=None)

BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def active_tape() -> Optional["Tape"]:
    """Return the tape currently recording, if any"""
    return _active_tape.get()


class Tensor:
    """Dense n-dimensional array that can take part in a differentiation tape.

    ``data`` is a numpy array (float32 by default, float64 for gradient checks).
    ``grad`` is populated by :meth:`Tape.backward` for leaves that require grad.
    ``node`` is the id of this tensor on the tape that recorded it last.
    """

    def __init__(self, data: Any, requires_grad: bool = False, name: Optional[str] = None,
                 dtype: Optional[np.dtype] = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            is_float = isinstance(data, (np.ndarray, np.generic)) and np.issubdtype(data.dtype, np.floating)
            dtype = data.dtype if is_float else DEFAULT_DTYPE
        self.data: np.ndarray = np.asarray(data, dtype=dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node: Optional[int] = None
        self.name = name

    # ------------------------------------------------------------------
    # properties
    # ------------------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        """Constant view of this tensor; never recorded on a tape"""
        return Tensor(self.data, requires_grad=False, name=self.name)

    def astype(self, dtype: np.dtype) -> "Tensor":
        """Copy as a new leaf with the given precision"""
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------------
    # operator sugar, resolved lazily to avoid an import cycle with ops
    # ------------------------------------------------------------------
    def __add__(self, other: Union["Tensor", float]) -> "Tensor":
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other: float) -> "Tensor":
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other: Union["Tensor", float]) -> "Tensor":
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other: float) -> "Tensor":
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other: float) -> "Tensor":
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other: float) -> "Tensor":
        from . import ops
        return ops.mul(self, 1.0 / float(other))

    def __neg__(self) -> "Tensor":
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, key: Any) -> "Tensor":
        from . import ops
        return ops.getitem(self, key)

    def reshape(self, *shape: int) -> "Tensor":
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    @property
    def T(self) -> "Tensor":
        from . import ops
        return ops.transpose(self)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


@dataclass
class TapeRecord:
    """One recorded operation: inputs -> output plus its backward rule"""
    op_name: str
    input_ids: Tuple[Optional[int], ...]
    output_id: int
    backward_rule: BackwardRule


class Tape:
    """Ordered record of the operations of one forward pass.

    Used as a context manager; while active, every op whose inputs require
    grad is appended in execution order, which is a topological order.
    """

    def __init__(self):
        self.records: List[TapeRecord] = []
        self._nodes: List[Tensor] = []
        self._index: Dict[int, int] = {}
        self._token: Optional[contextvars.Token] = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if self._token is not None:
            _active_tape.reset(self._token)
            self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def node_id(self, tensor: Tensor) -> int:
        key = id(tensor)
        idx = self._index.get(key)
        if idx is None:
            idx = len(self._nodes)
            self._nodes.append(tensor)
            self._index[key] = idx
        tensor.node = idx
        return idx

    def record(self, op_name: str, inputs: Sequence[Tensor], output: Tensor, backward_rule: BackwardRule) -> None:
        input_ids = tuple(self.node_id(t) if t.requires_grad else None for t in inputs)
        output_id = self.node_id(output)
        self.records.append(TapeRecord(op_name, input_ids, output_id, backward_rule))

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` of every leaf on this tape with d(loss)/d(leaf).

        Leaves the loss does not depend on receive a zero gradient.
        """
        if loss.data.size != 1:
            raise RankError(f"backward requires a scalar loss, got shape {loss.shape}")
        loss_id = self._index.get(id(loss))
        if loss_id is None:
            raise TapeError("loss was not produced on this tape")

        grads: List[Optional[np.ndarray]] = [None] * len(self._nodes)
        grads[loss_id] = np.ones_like(loss.data)

        for record in reversed(self.records):
            upstream = grads[record.output_id]
            if upstream is None:
                continue
            input_grads = record.backward_rule(upstream)
            for idx, contribution in zip(record.input_ids, input_grads):
                if idx is None or contribution is None:
                    continue
                grads[idx] = contribution if grads[idx] is None else grads[idx] + contribution

        produced = {record.output_id for record in self.records}
        for idx, tensor in enumerate(self._nodes):
            if idx in produced or not tensor.requires_grad:
                continue
            g = grads[idx]
            g = np.zeros_like(tensor.data) if g is None else np.array(g, dtype=tensor.data.dtype, copy=True)
            tensor.grad = g if tensor.grad is None else tensor.grad + g


class Function:
    """Base class of every differentiable primitive.

    Subclasses implement ``forward`` on raw arrays and ``backward`` returning one
    gradient (or None) per input tensor.
    """

    name = "function"

    def __init__(self, *inputs: Tensor):
        self.inputs = inputs

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__}.forward")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__}.backward")

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs: Any) -> Tensor:
        fn = cls(*inputs)
        out_data = fn.forward(*(t.data for t in inputs), **kwargs)
        tape = _active_tape.get()
        track = tape is not None and any(t.requires_grad for t in inputs)
        out = Tensor(np.asarray(out_data), requires_grad=track)
        if track:
            tape.record(cls.name, inputs, out, fn.backward)
        return out


def as_tensor(value: Union[Tensor, float, np.ndarray], like: Optional[Tensor] = None) -> Tensor:
    """Wrap a constant so it can be mixed with tensors of ``like``'s precision"""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else DEFAULT_DTYPE
    return Tensor(np.asarray(value, dtype=dtype))
