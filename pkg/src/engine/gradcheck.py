"""
Finite-difference gradient oracle
"""
from typing import Callable, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from ..exceptions import EvaluationError
from .tensor import CHECK_DTYPE, Tape, Tensor

ExpressionBuilder = Callable[[Tensor], Tensor]

MIN_EPS = 1e-6
MAX_EPS = 1e-3
DENOM_FLOOR = 1e-8


def _evaluate(f: ExpressionBuilder, values: np.ndarray) -> float:
    result = f(Tensor(values, dtype=CHECK_DTYPE))
    value = float(np.sum(result.data))
    if not np.isfinite(value):
        raise EvaluationError(f"expression is not finite at a perturbed point (value={value})")
    return value


def grad_check(f: ExpressionBuilder, x0: Tensor, eps: float = 1e-6, max_coords: Optional[int] = None,
               rng: Optional[np.random.Generator] = None) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` maps a tensor to a scalar tensor and must be deterministic. Evaluation
    runs in 64-bit with BLAS pinned to one thread. When ``max_coords`` is set, a
    random subset of that many coordinates is checked.
    """
    if not MIN_EPS <= eps <= MAX_EPS:
        raise ValueError(f"eps must lie in [{MIN_EPS}, {MAX_EPS}], got {eps}")

    with threadpool_limits(limits=1):
        x = Tensor(np.array(x0.data, dtype=CHECK_DTYPE), requires_grad=True)
        with Tape() as tape:
            out = f(x)
        tape.backward(out)
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)

        base = x.data.copy()
        coords = np.arange(base.size)
        if max_coords is not None and max_coords < base.size:
            rng = rng or np.random.default_rng(0)
            coords = np.sort(rng.choice(base.size, size=max_coords, replace=False))

        worst = 0.0
        for coord in coords:
            plus = base.copy()
            plus.flat[coord] += eps
            minus = base.copy()
            minus.flat[coord] -= eps
            numeric = (_evaluate(f, plus) - _evaluate(f, minus)) / (2.0 * eps)
            exact = float(analytic.flat[coord])
            denom = max(abs(exact), abs(numeric), DENOM_FLOOR)
            worst = max(worst, abs(exact - numeric) / denom)
    return worst
