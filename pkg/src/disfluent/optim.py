"""RMSProp optimizer.

Update rule per parameter: v <- rho*v + (1-rho)*g^2, then
theta <- theta - lr * g / (sqrt(v) + eps).
"""

import numpy as np

from .errors import ShapeMismatch
from .tensor import Tensor, assert_finite


def rmsprop_update(theta: np.ndarray, grad: np.ndarray, v: np.ndarray,
                   lr: float, rho: float, eps: float) -> None:
    """Apply one in-place RMSProp step to a single parameter array."""
    if grad.shape != theta.shape or v.shape != theta.shape:
        raise ShapeMismatch(
            f"rmsprop shapes: theta {theta.shape}, grad {grad.shape}, v {v.shape}"
        )
    v *= rho
    v += (1.0 - rho) * grad * grad
    theta -= lr * grad / (np.sqrt(v) + eps)


class RmsProp:
    """Holds one squared-gradient accumulator per named parameter."""

    def __init__(self, params: dict[str, Tensor], learning_rate: float = 1e-4,
                 rho: float = 0.9, epsilon: float = 1e-8):
        self.params = params
        self.learning_rate = learning_rate
        self.rho = rho
        self.epsilon = epsilon
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        """Update every parameter that received a gradient; parameters with
        no gradient (unreached by backward) are left untouched."""
        for name, p in self.params.items():
            if p.grad is None:
                continue
            assert_finite(p.grad, f"gradient of {name}")
            rmsprop_update(p.data, p.grad, self.v[name],
                           self.learning_rate, self.rho, self.epsilon)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Accumulators keyed for checkpointing."""
        return {f"opt.v.{name}": v for name, v in self.v.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name in self.v:
            key = f"opt.v.{name}"
            if key in arrays:
                self.v[name] = arrays[key].astype(self.v[name].dtype)
