"""Adam optimiser over named parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .tensor import Parameter


@dataclass
class AdamState:
    """Per-parameter first/second moments and the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_update(value, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns (new_value, m, v)."""
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return value - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    """Holds moment state for a fixed set of parameters; a missing
    gradient is treated as zero."""

    def __init__(self, params: dict[str, Parameter], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.state = AdamState(beta1=beta1, beta2=beta2, eps=eps)
        for name, p in self.params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        st = self.state
        st.t += 1
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            if grad.shape != p.data.shape:
                raise UsageError(f"gradient shape {grad.shape} != parameter {name} shape {p.data.shape}")
            p.data[...], st.m[name], st.v[name] = adam_update(
                p.data, grad, st.m[name], st.v[name], st.t, lr, st.beta1, st.beta2, st.eps
            )

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def clip_gradients(params: dict[str, Parameter], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm;
    returns the pre-clip norm."""
    if max_norm <= 0:
        raise UsageError("max_norm must be positive")
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm
