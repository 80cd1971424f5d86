"""AdamW with decoupled weight decay and layer-wise learning-rate decay."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class OptimState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def hyper(self) -> dict:
        return {"beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "weight_decay": self.weight_decay}

    @classmethod
    def from_checkpoint(cls, d: Mapping) -> "OptimState":
        return cls(dict(d["m"]), dict(d["v"]), int(d["t"]), **d["hyper"])


def decays(name: str) -> bool:
    """Weight decay applies to weights and LoRA factors, not biases, norms or pos-embed."""
    if name == "pos_embed" or name.endswith(".bias"):
        return False
    if "norm" in name.rsplit(".", 1)[0].split(".")[-1]:
        return False
    return True


_BLOCK = re.compile(r"^blocks\.(\d+)\.")


def depth_index(name: str, depth: int) -> int:
    if name.startswith(("patch_embed.", "pos_embed")):
        return 0
    m = _BLOCK.match(name)
    if m:
        i = int(m.group(1))
        if i >= depth:
            raise KeyError(f"{name}: block index {i} beyond depth {depth}")
        return i + 1
    if name.startswith(("head.", "norm.")):
        return depth + 1
    raise KeyError(f"cannot assign a layer depth to parameter {name!r}")


def layerwise_lr(name: str, depth: int, base_lr: float, decay: float = 0.85) -> float:
    return base_lr * decay ** (depth + 1 - depth_index(name, depth))


def adamw_update(theta, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
    """One AdamW update of a single tensor at step ``t`` (1-based). Returns (theta, m, v)."""
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps) - lr * weight_decay * theta
    return theta, m, v


def adamw_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
               state: OptimState, lrs: Mapping[str, float]):
    """Apply one step to every parameter that has a gradient.

    Returns new ``(params, state)``; inputs are left untouched. Parameters
    without a gradient are passed through as the same array objects.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name}; step aborted")
    t = state.t + 1
    new_params = dict(params)
    new_m, new_v = dict(state.m), dict(state.v)
    for name, g in grads.items():
        theta = params[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(theta)
            v = np.zeros_like(theta)
        wd = state.weight_decay if decays(name) else 0.0
        theta, m, v = adamw_update(theta, g.astype(theta.dtype, copy=False), m, v, t, lrs[name],
                                   state.beta1, state.beta2, state.eps, wd)
        new_params[name] = theta.astype(params[name].dtype, copy=False)
        new_m[name] = m.astype(params[name].dtype, copy=False)
        new_v[name] = v.astype(params[name].dtype, copy=False)
    return new_params, OptimState(new_m, new_v, t, state.beta1, state.beta2, state.eps,
                                  state.weight_decay)
