"""AdamW with decoupled weight decay, cosine schedule and global-norm clipping"""

import math
from typing import Dict, Optional

import numpy as np

from src.app.nn.autodiff import Parameter
from src.core.errors import ShapeError


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Learning rate for 0-based ``step`` of ``total_steps``; the last step gets 0"""
    if total_steps <= 0:
        return base_lr
    progress = min(step + 1, total_steps) / total_steps
    value = base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
    return max(value, 0.0)


def global_grad_norm(params: Dict[str, Parameter]) -> float:
    total = 0.0
    for param in params.values():
        if param.grad is not None:
            total += float(np.sum(param.grad * param.grad))
    return math.sqrt(total)


def clip_grad_norm(params: Dict[str, Parameter], max_norm: float) -> float:
    """Scale gradients in place so their global norm is at most ``max_norm``"""
    norm = global_grad_norm(params)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for param in params.values():
            if param.grad is not None:
                param.grad = param.grad * scale
    return norm


class AdamW:
    """Adaptive moments with weight decay applied directly to the weights"""

    def __init__(
        self,
        params: Dict[str, Parameter],
        betas=(0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = params
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m: Dict[str, np.ndarray] = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v: Dict[str, np.ndarray] = {name: np.zeros_like(p.data) for name, p in params.items()}

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()

    def step(self, lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        correction1 = 1.0 - self.beta1 ** t
        correction2 = 1.0 - self.beta2 ** t
        for name, param in self.params.items():
            grad = param.grad if param.grad is not None else np.zeros_like(param.data)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            update = (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * param.data
            param.data -= lr * update

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Moments as archive entries ``adam.m/<name>`` and ``adam.v/<name>``"""
        state: Dict[str, np.ndarray] = {}
        for name in self.params:
            state[f"adam.m/{name}"] = self.m[name].copy()
            state[f"adam.v/{name}"] = self.v[name].copy()
        return state

    def load_state_arrays(self, arrays: Dict[str, np.ndarray], step_count: Optional[int] = None) -> None:
        for name, param in self.params.items():
            for store, prefix in ((self.m, "adam.m/"), (self.v, "adam.v/")):
                key = prefix + name
                if key not in arrays:
                    continue
                if arrays[key].shape != param.shape:
                    raise ShapeError(f"{key}: shape {arrays[key].shape} != {param.shape}")
                store[name] = np.array(arrays[key], dtype=np.float64)
        if step_count is not None:
            self.step_count = int(step_count)
