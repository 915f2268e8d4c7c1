"""SGD with momentum and weight decay, plus learning-rate annealing."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SgdState:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0002
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")


def _decays(name: str) -> bool:
    return name.endswith(".weight")


def sgd_step(params, grads, state: SgdState) -> None:
    """In-place update of ``params`` (a name -> array mapping).

    v <- momentum * v + grad + weight_decay * param   (decay on weights only)
    param <- param - lr * v
    """
    fused = getattr(grads, "fused", grads)
    store = params.raw() if hasattr(params, "raw") else params
    if set(fused) != set(store):
        missing = sorted(set(store) ^ set(fused))
        raise KeyError(f"gradient keys do not match parameters: {missing[:5]}")
    for name, p in store.items():
        g = fused[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        step = g.astype(p.dtype, copy=True)
        if state.weight_decay and _decays(name):
            step += state.weight_decay * p
        v = state.velocity.get(name)
        if v is not None:
            if v.shape != p.shape:
                raise ValueError(f"{name}: velocity shape {v.shape} != parameter shape {p.shape}")
            step += state.momentum * v
        state.velocity[name] = step
        p -= p.dtype.type(state.lr) * step


@dataclass
class LrSchedule:
    """``plateau``: drop when the best eval error improved by < ``min_delta``
    over the last ``patience`` evals. ``fixed_steps``: drop at ``milestones``.
    """

    kind: str = "plateau"
    drop_factor: float = 10.0
    patience: int = 3
    min_delta: float = 0.001
    milestones: list[int] = field(default_factory=list)
    history: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("plateau", "fixed_steps"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.drop_factor <= 1:
            raise ValueError(f"drop_factor must be > 1, got {self.drop_factor}")


def schedule_step(sched: LrSchedule, eval_error: float | None, state: SgdState,
                  iteration: int | None = None) -> bool:
    """Apply one schedule update; returns True when the learning rate dropped."""
    if sched.kind == "fixed_steps":
        if iteration is not None and iteration in sched.milestones:
            state.lr /= sched.drop_factor
            return True
        return False
    if eval_error is None:
        return False
    if not np.isfinite(eval_error):
        raise ValueError(f"eval error must be finite, got {eval_error}")
    sched.history.append(float(eval_error))
    if len(sched.history) <= sched.patience:
        return False
    reference = min(sched.history[:-sched.patience])
    recent = min(sched.history[-sched.patience:])
    if reference - recent < sched.min_delta:
        state.lr /= sched.drop_factor
        sched.history = [float(eval_error)]
        return True
    return False
