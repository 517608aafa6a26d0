"""
Optimisation
Adam with bias correction and a reduce-on-plateau learning-rate schedule
"""
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np
import structlog

from ..exceptions import NonFiniteGradientError
from ..models import ModelParams

logger = structlog.get_logger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    """Step counter and first/second moment estimates per parameter"""
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def _check_finite(grads: Dict[str, np.ndarray], step: int) -> None:
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(name, {
                "step": step + 1,
                "shape": tuple(grad.shape),
                "n_nan": int(np.isnan(grad).sum()),
                "n_inf": int(np.isinf(grad).sum()),
            })


def adam_step(params: ModelParams, grads: Dict[str, np.ndarray], state: AdamState, lr: float) -> None:
    """One in-place Adam update. Every gradient is checked before any parameter moves."""
    _check_finite(grads, state.step)
    state.step += 1
    correction1 = 1.0 - ADAM_BETA1 ** state.step
    correction2 = 1.0 - ADAM_BETA2 ** state.step
    for name, tensor in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(tensor.data)
            v = np.zeros_like(tensor.data)
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * grad
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * grad * grad
        state.m[name] = m.astype(tensor.dtype, copy=False)
        state.v[name] = v.astype(tensor.dtype, copy=False)
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + ADAM_EPS)
        tensor.data = (tensor.data - update).astype(tensor.dtype, copy=False)


class AdamOptimizer:
    """Adam over a ModelParams collection, reading gradients from the tensors"""

    def __init__(self, params: ModelParams, lr: float):
        self.params = params
        self.lr = lr
        self.state = AdamState()

    def step(self) -> None:
        grads = {name: t.grad for name, t in self.params.items() if t.grad is not None}
        adam_step(self.params, grads, self.state, self.lr)

    def zero_grad(self) -> None:
        self.params.zero_grad()

    def state_dict(self) -> Dict[str, Any]:
        return {"step": self.state.step, "lr": self.lr}

    def load_state_dict(self, state: Dict[str, Any], moments: Optional[Dict[str, Dict[str, np.ndarray]]] = None) -> None:
        self.state.step = int(state["step"])
        self.lr = float(state["lr"])
        if moments is not None:
            self.state.m = dict(moments.get("m", {}))
            self.state.v = dict(moments.get("v", {}))


class PlateauScheduler:
    """Divide the learning rate by ``decay`` after ``patience`` epochs without
    a relative improvement of ``threshold``, never going below ``min_lr``"""

    def __init__(self, lr: float, patience: int = 2, decay: float = 10.0, min_lr: float = 1e-7,
                 threshold: float = 1e-3):
        self.lr = lr
        self.patience = patience
        self.decay = decay
        self.min_lr = min_lr
        self.threshold = threshold
        self.best: Optional[float] = None
        self.num_bad_epochs = 0

    def step(self, epoch_loss: float) -> float:
        if self.best is None or epoch_loss < self.best * (1.0 - self.threshold):
            self.best = epoch_loss
            self.num_bad_epochs = 0
            return self.lr

        self.num_bad_epochs += 1
        if self.num_bad_epochs >= self.patience:
            reduced = max(self.lr / self.decay, self.min_lr)
            if reduced < self.lr:
                logger.info("Learning rate reduced", old_lr=self.lr, new_lr=reduced, best_loss=self.best)
            self.lr = reduced
            self.num_bad_epochs = 0
        return self.lr

    def state_dict(self) -> Dict[str, Any]:
        return {"lr": self.lr, "best": self.best, "num_bad_epochs": self.num_bad_epochs}

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        self.lr = float(state["lr"])
        self.best = None if state.get("best") is None else float(state["best"])
        self.num_bad_epochs = int(state.get("num_bad_epochs", 0))


def lr_schedule(scheduler: PlateauScheduler, epoch_train_loss: float) -> float:
    """Advance the schedule by one epoch and return the learning rate to use next"""
    return scheduler.step(epoch_train_loss)
