"""
Differentiable primitives
Every model computation is built from the Function subclasses below
"""
from typing import Any, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from ..exceptions import (
    DegenerateVectorError,
    DimensionError,
    DomainError,
    EmptySliceError,
    VocabularyError,
)
from .tensor import Function, Tensor, as_tensor

Operand = Union[Tensor, float, np.ndarray]

DEFAULT_LEAKY_SLOPE = 0.1
NORM_EPS = 1e-12


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``"""
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def _pair(a: Operand, b: Operand) -> Tuple[Tensor, Tensor]:
    like = a if isinstance(a, Tensor) else b if isinstance(b, Tensor) else None
    return as_tensor(a, like), as_tensor(b, like)


# ================================
# ELEMENTWISE
# ================================

class Add(Function):
    name = "add"

    def forward(self, a, b):
        _check_broadcast(self.name, a, b)
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(grad, self.shapes[1])


class Sub(Function):
    name = "sub"

    def forward(self, a, b):
        _check_broadcast(self.name, a, b)
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        _check_broadcast(self.name, a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return _unbroadcast(grad * self.b, self.a.shape), _unbroadcast(grad * self.a, self.b.shape)


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, a):
        self.out = expit(a).astype(a.dtype, copy=False)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Tanh(Function):
    name = "tanh"

    def forward(self, a):
        self.out = np.tanh(a)
        return self.out

    def backward(self, grad):
        return (grad * (1.0 - self.out * self.out),)


class LeakyReLU(Function):
    name = "leaky_relu"

    def forward(self, a, slope=DEFAULT_LEAKY_SLOPE):
        self.scale = np.where(a > 0, 1.0, slope).astype(a.dtype)
        return a * self.scale

    def backward(self, grad):
        return (grad * self.scale,)


class Exp(Function):
    name = "exp"

    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Log(Function):
    name = "log"

    def forward(self, a):
        if np.any(a <= 0):
            raise DomainError(f"log of non-positive value (min={float(np.min(a))})")
        self.a = a
        return np.log(a)

    def backward(self, grad):
        return (grad / self.a,)


def add(a: Operand, b: Operand) -> Tensor:
    return Add.apply(*_pair(a, b))


def sub(a: Operand, b: Operand) -> Tensor:
    return Sub.apply(*_pair(a, b))


def mul(a: Operand, b: Operand) -> Tensor:
    return Mul.apply(*_pair(a, b))


def sigmoid(a: Tensor) -> Tensor:
    return Sigmoid.apply(a)


def tanh(a: Tensor) -> Tensor:
    return Tanh.apply(a)


def leaky_relu(a: Tensor, slope: float = DEFAULT_LEAKY_SLOPE) -> Tensor:
    return LeakyReLU.apply(a, slope=slope)


def exp(a: Tensor) -> Tensor:
    return Exp.apply(a)


def log(a: Tensor) -> Tensor:
    return Log.apply(a)


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "exp": exp, "log": log}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(kind: str, a: Tensor, b: Optional[Operand] = None, slope: float = DEFAULT_LEAKY_SLOPE) -> Tensor:
    """Dispatch an elementwise primitive by name"""
    if kind in _BINARY:
        if b is None:
            raise DimensionError(f"{kind} needs two operands")
        return _BINARY[kind](a, b)
    if kind == "leaky_relu":
        return leaky_relu(a, slope)
    if kind in _UNARY:
        return _UNARY[kind](a)
    raise ValueError(f"Unknown elementwise kind: {kind}")


# ================================
# LINEAR ALGEBRA
# ================================

class MatMul(Function):
    name = "matmul"

    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ self.b.T, self.a.T @ grad


class Conv2d(Function):
    """Cross-correlation of a C x H x W map with a C' x C x k x k kernel ("same" padding)"""

    name = "conv2d"

    def forward(self, x, kernel, *bias, stride=1, pad=None):
        if x.ndim != 3 or kernel.ndim != 4:
            raise DimensionError(f"conv2d: expected C x H x W input and 4-D kernel, got {x.shape} and {kernel.shape}")
        c_out, c_in, kh, kw = kernel.shape
        if c_in != x.shape[0]:
            raise DimensionError(f"conv2d: channel mismatch between input {x.shape} and kernel {kernel.shape}")
        if kh != kw or kh not in (1, 3):
            raise DimensionError(f"conv2d: kernel must be 1x1 or 3x3, got {kernel.shape}")
        if stride not in (1, 2):
            raise DimensionError(f"conv2d: stride must be 1 or 2, got {stride}")
        pad = kh // 2 if pad is None else pad
        channels, height, width = x.shape
        out_h = (height + 2 * pad - kh) // stride + 1
        out_w = (width + 2 * pad - kw) // stride + 1
        if out_h != -(-height // stride) or out_w != -(-width // stride):
            raise DimensionError(f"conv2d: pad={pad} does not give same-size output for input {x.shape}")

        padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
        cols = np.empty((channels, kh, kw, out_h, out_w), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                cols[:, i, j] = padded[:, i:i + stride * out_h:stride, j:j + stride * out_w:stride]
        self.cols = cols.reshape(channels * kh * kw, out_h * out_w)
        self.kmat = kernel.reshape(c_out, -1)
        self.geometry = (x.shape, kernel.shape, padded.shape, pad, stride, out_h, out_w)
        self.has_bias = bool(bias)

        out = self.kmat @ self.cols
        if bias:
            out = out + bias[0][:, None]
        return out.reshape(c_out, out_h, out_w)

    def backward(self, grad):
        x_shape, k_shape, padded_shape, pad, stride, out_h, out_w = self.geometry
        channels, height, width = x_shape
        kh, kw = k_shape[2], k_shape[3]
        g = grad.reshape(k_shape[0], -1)

        dkernel = (g @ self.cols.T).reshape(k_shape)
        dcols = (self.kmat.T @ g).reshape(channels, kh, kw, out_h, out_w)
        dpadded = np.zeros(padded_shape, dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                dpadded[:, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += dcols[:, i, j]
        dx = dpadded[:, pad:pad + height, pad:pad + width]
        if self.has_bias:
            return dx, dkernel, g.sum(axis=1)
        return dx, dkernel


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           pad: Optional[int] = None) -> Tensor:
    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return Conv2d.apply(*inputs, stride=stride, pad=pad)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Row-wise affine map ``x @ weight + bias`` for an N x in matrix"""
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# ================================
# NORMALIZATION
# ================================

class Softmax(Function):
    name = "softmax"

    def forward(self, a, axis=-1, mask=None):
        if mask is None:
            valid = np.ones(a.shape, dtype=bool)
        else:
            valid = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
        if np.any(~valid.any(axis=axis)):
            raise EmptySliceError(f"softmax: a slice along axis {axis} has no valid position")
        masked = np.where(valid, a, -np.inf)
        shifted = masked - masked.max(axis=axis, keepdims=True)
        e = np.where(valid, np.exp(shifted), 0.0).astype(a.dtype)
        self.out = e / e.sum(axis=axis, keepdims=True)
        self.axis = axis
        return self.out

    def backward(self, grad):
        s = self.out
        return (s * (grad - (grad * s).sum(axis=self.axis, keepdims=True)),)


class LogSumExp(Function):
    name = "logsumexp"

    def forward(self, a, axis=-1):
        peak = a.max(axis=axis, keepdims=True)
        e = np.exp(a - peak)
        total = e.sum(axis=axis, keepdims=True)
        self.weights = e / total
        self.axis = axis
        return np.squeeze(peak + np.log(total), axis=axis)

    def backward(self, grad):
        return (np.expand_dims(grad, self.axis) * self.weights,)


class L2Normalize(Function):
    name = "l2_normalize"

    def forward(self, a, axis=-1, eps=NORM_EPS):
        norm = np.sqrt((a * a).sum(axis=axis, keepdims=True))
        if np.any(norm <= eps):
            raise DegenerateVectorError(f"l2_normalize: slice norm below {eps} (min={float(norm.min())})")
        self.norm = norm
        self.out = a / norm
        self.axis = axis
        return self.out

    def backward(self, grad):
        y = self.out
        return ((grad - y * (grad * y).sum(axis=self.axis, keepdims=True)) / self.norm,)


def softmax(a: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    return Softmax.apply(a, axis=axis, mask=mask)


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    return LogSumExp.apply(a, axis=axis)


def l2_normalize(a: Tensor, axis: int = -1) -> Tensor:
    return L2Normalize.apply(a, axis=axis)


# ================================
# RESAMPLING
# ================================

class Upsample2x(Function):
    """Nearest-neighbour 2x upsampling of the two trailing axes"""

    name = "upsample2x"

    def forward(self, a):
        if a.ndim < 2:
            raise DimensionError(f"upsample2x: needs at least 2 axes, got {a.shape}")
        self.shape = a.shape
        return np.repeat(np.repeat(a, 2, axis=-2), 2, axis=-1)

    def backward(self, grad):
        *lead, height, width = self.shape
        return (grad.reshape(*lead, height, 2, width, 2).sum(axis=(-3, -1)),)


def bilinear_matrix(out_size: int, in_size: int, dtype=np.float32) -> np.ndarray:
    """Interpolation weights (out_size x in_size), half-pixel centres, edge clamped"""
    weights = np.zeros((out_size, in_size), dtype=np.float64)
    scale = in_size / out_size
    for dst in range(out_size):
        src = min(max((dst + 0.5) * scale - 0.5, 0.0), in_size - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, in_size - 1)
        frac = src - lo
        weights[dst, lo] += 1.0 - frac
        weights[dst, hi] += frac
    return weights.astype(dtype)


class ResizeBilinear(Function):
    """Bilinear resize of an H x W map (or C x H x W stack) as two matrix products"""

    name = "resize_bilinear"

    def forward(self, a, out_h, out_w):
        if a.ndim not in (2, 3):
            raise DimensionError(f"resize_bilinear: expected 2-D or 3-D input, got {a.shape}")
        self.rows = bilinear_matrix(out_h, a.shape[-2], a.dtype)
        self.cols = bilinear_matrix(out_w, a.shape[-1], a.dtype)
        return np.einsum("ih,...hw,jw->...ij", self.rows, a, self.cols)

    def backward(self, grad):
        return (np.einsum("ih,...ij,jw->...hw", self.rows, grad, self.cols),)


def upsample2x(a: Tensor) -> Tensor:
    return Upsample2x.apply(a)


def resize_bilinear(a: Tensor, out_h: int, out_w: int) -> Tensor:
    return ResizeBilinear.apply(a, out_h=out_h, out_w=out_w)


# ================================
# SHAPE
# ================================

class Reshape(Function):
    name = "reshape"

    def forward(self, a, shape):
        self.shape = a.shape
        try:
            return a.reshape(shape)
        except ValueError:
            raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Transpose(Function):
    name = "transpose"

    def forward(self, a):
        if a.ndim != 2:
            raise DimensionError(f"transpose: expected a matrix, got {a.shape}")
        return a.T

    def backward(self, grad):
        return (grad.T,)


class Concat(Function):
    name = "concat"

    def forward(self, *arrays, axis=0):
        try:
            out = np.concatenate(arrays, axis=axis)
        except ValueError:
            raise DimensionError(f"concat: incompatible shapes {[a.shape for a in arrays]}") from None
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        self.axis = axis
        return out

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


class GetItem(Function):
    name = "getitem"

    def forward(self, a, key):
        self.shape, self.key = a.shape, key
        return np.array(a[key])

    def backward(self, grad):
        full = np.zeros(self.shape, dtype=grad.dtype)
        full[self.key] = grad
        return (full,)


class Expand(Function):
    name = "expand"

    def forward(self, a, shape):
        self.shape = a.shape
        try:
            return np.broadcast_to(a, shape).copy()
        except ValueError:
            raise DimensionError(f"expand: cannot broadcast {a.shape} to {tuple(shape)}") from None

    def backward(self, grad):
        return (_unbroadcast(grad, self.shape),)


class Sum(Function):
    name = "sum"

    def forward(self, a, axis=None, keepdims=False):
        self.shape, self.axis, self.keepdims = a.shape, axis, keepdims
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape).copy(),)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


def transpose(a: Tensor) -> Tensor:
    return Transpose.apply(a)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def getitem(a: Tensor, key: Any) -> Tensor:
    return GetItem.apply(a, key=key)


def expand(a: Tensor, shape: Sequence[int]) -> Tensor:
    return Expand.apply(a, shape=tuple(shape))


def sum(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ================================
# LOOKUP AND LOSSES
# ================================

class Embedding(Function):
    name = "embedding"

    def forward(self, table, ids):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
            raise VocabularyError(f"token id out of range [0, {table.shape[0]}): {ids.tolist()}")
        self.ids, self.shape = ids, table.shape
        return table[ids]

    def backward(self, grad):
        dtable = np.zeros(self.shape, dtype=grad.dtype)
        np.add.at(dtable, self.ids, grad)
        return (dtable,)


class BCEWithLogits(Function):
    """Mean binary cross-entropy of logits against a {0,1} target, logit form"""

    name = "bce_with_logits"

    def forward(self, logits, target):
        target = np.asarray(target, dtype=logits.dtype)
        if target.shape != logits.shape:
            raise DimensionError(f"bce_with_logits: logits {logits.shape} vs target {target.shape}")
        self.logits, self.target = logits, target
        losses = np.maximum(logits, 0) - logits * target + np.log1p(np.exp(-np.abs(logits)))
        return np.asarray(losses.mean(), dtype=logits.dtype)

    def backward(self, grad):
        probs = expit(self.logits).astype(self.logits.dtype, copy=False)
        return (grad * (probs - self.target) / self.logits.size,)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    return Embedding.apply(table, ids=ids)


def bce_with_logits(logits: Tensor, target: np.ndarray) -> Tensor:
    return BCEWithLogits.apply(logits, target=target)
