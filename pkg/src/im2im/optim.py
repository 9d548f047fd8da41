"""Adam optimizer with bias correction (Kingma-Ba formulation)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeMismatchError, Tensor


@dataclass
class AdamState:
    """First/second moment estimates plus the shared step counter."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0

    @classmethod
    def initial(cls, params: list[Tensor]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
            t=0,
        )


def adam_step(
    params: list[Tensor],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> None:
    """One in-place Adam update of every parameter.

    theta <- theta - lr * m_hat / (sqrt(v_hat) + epsilon), with the moments
    bias-corrected by 1/(1 - beta^t). The step counter increments exactly
    once per call.
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeMismatchError(
            f"adam_step length mismatch: {len(params)} params, {len(grads)} grads, "
            f"{len(state.m)}/{len(state.v)} moment entries"
        )
    for p, g, m in zip(params, grads, state.m):
        if g.shape != p.data.shape or m.shape != p.data.shape:
            raise ShapeMismatchError(
                f"adam_step shape mismatch: param {p.data.shape}, grad {g.shape}, moment {m.shape}"
            )
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * (g * g)
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + epsilon)
