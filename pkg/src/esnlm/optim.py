"""AdamW with decoupled weight decay, written out from its update recurrences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError
from .head import OutputHead

PARAM_NAMES = ("a_mat", "b_mat", "bias")


@dataclass
class OptimizerState:
    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 1e-2
    decay_bias: bool = True

    @classmethod
    def for_head(cls, head: OutputHead, **settings) -> "OptimizerState":
        zeros = {k: np.zeros(v.shape, dtype=np.float64) for k, v in head.tensors().items()}
        return cls({k: v.copy() for k, v in zeros.items()}, zeros, **settings)


def adamw_step(head: OutputHead, opt: OptimizerState, grads) -> tuple[OutputHead, OptimizerState]:
    """One in-place AdamW update of all three head tensors.

    m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
    theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + wd theta)

    Moments are float64; parameters keep their own dtype. Gradients are
    checked before anything is touched, so a rejected step leaves both the
    head and the optimizer unchanged.
    """
    grads = grads._asdict() if hasattr(grads, "_asdict") else dict(grads)
    for name in PARAM_NAMES:
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteError(f"non-finite gradient in {name}", tensor=name)

    opt.step_count += 1
    t = opt.step_count
    c1 = 1.0 - opt.beta1**t
    c2 = 1.0 - opt.beta2**t
    params = head.tensors()
    for name in PARAM_NAMES:
        g = np.asarray(grads[name], dtype=np.float64)
        m = opt.first_moment[name]
        v = opt.second_moment[name]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * (g * g)
        theta = params[name].astype(np.float64)
        update = (m / c1) / (np.sqrt(v / c2) + opt.epsilon)
        if opt.weight_decay and (opt.decay_bias or name != "bias"):
            update = update + opt.weight_decay * theta
        params[name][...] = theta - opt.learning_rate * update
    return head, opt
