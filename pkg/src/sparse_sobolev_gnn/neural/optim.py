"""Adam optimizer over named numpy tensors."""

import numpy as np


class Adam:
    """Adam with bias correction. Parameters are updated in place."""

    def __init__(
        self,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if learning_rate < 0:
            raise ValueError(f"learning rate must be nonnegative, got {learning_rate}")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0
        self._first: dict[str, np.ndarray] = {}
        self._second: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        if set(params) != set(grads):
            mismatched = sorted(set(params) ^ set(grads))
            raise KeyError(f"gradient names differ from parameter names: {mismatched}")
        self.steps += 1
        correction1 = 1.0 - self.beta1**self.steps
        correction2 = 1.0 - self.beta2**self.steps
        for name, param in params.items():
            grad = grads[name]
            first = self._first.setdefault(name, np.zeros_like(param))
            second = self._second.setdefault(name, np.zeros_like(param))
            first *= self.beta1
            first += (1.0 - self.beta1) * grad
            second *= self.beta2
            second += (1.0 - self.beta2) * grad * grad
            param -= self.learning_rate * (first / correction1) / (
                np.sqrt(second / correction2) + self.eps
            )
