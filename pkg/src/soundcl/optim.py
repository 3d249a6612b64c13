"""Adam optimizer with bias correction.

Moment estimates live next to the parameters they track; ``step_count``
increases by exactly one per update. Gradients must be finite — a NaN/Inf
gradient aborts the step with the offending parameter's name.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Adam:
    def __init__(self, params: list[Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        """Apply one Adam update in place using each parameter's ``grad``."""
        self.step_count += 1
        t = self.step_count
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                label = p.name or f"param[{i}]"
                raise FloatingPointError(f"non-finite gradient for {label}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / (1.0 - self.beta1 ** t)
            v_hat = self.v[i] / (1.0 - self.beta2 ** t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: Adam):
    """Functional form: load ``grads`` onto ``params`` and step ``state``."""
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    for p, g in zip(params, grads):
        if g.shape != p.data.shape:
            raise ValueError(
                f"grad shape {g.shape} does not match param shape {p.data.shape}"
            )
        p.grad = np.asarray(g, dtype=np.float64)
    state.step()
