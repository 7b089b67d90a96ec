"""Adam with bias-corrected moments and optional global-norm clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import ParameterSet, ShapeError

DEFAULT_LR = 2.5e-4


@dataclass
class OptimizerState:
    lr: float = DEFAULT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {"__step__": np.array([self.step], dtype=np.int64)}
        for k in self.m:
            out[f"m/{k}"] = self.m[k]
            out[f"v/{k}"] = self.v[k]
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], **hyper) -> OptimizerState:
        st = cls(**hyper)
        st.step = int(arrays["__step__"][0])
        for k, a in arrays.items():
            if k.startswith("m/"):
                st.m[k[2:]] = a.copy()
            elif k.startswith("v/"):
                st.v[k[2:]] = a.copy()
        return st


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def adam_step(params: ParameterSet | dict, grads: dict[str, np.ndarray], state: OptimizerState) -> None:
    """Update ``params`` in place from ``grads`` (name -> array)."""
    tensors = dict(params.items())
    for k, g in grads.items():
        if k not in tensors:
            raise KeyError(f"gradient for unknown parameter {k!r}")
        if np.shape(g) != tensors[k].shape:
            raise ShapeError(f"{k}: gradient shape {np.shape(g)} != {tensors[k].shape}")
    state.step += 1
    t = state.step
    c1 = 1 - state.beta1**t
    c2 = 1 - state.beta2**t
    for k, g in grads.items():
        p = tensors[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(p.data)
            state.v[k] = np.zeros_like(p.data)
        m, v = state.m[k], state.v[k]
        if m.shape != p.shape:
            raise ShapeError(f"{k}: moment shape {m.shape} != {p.shape}")
        g = np.asarray(g, dtype=p.dtype)
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.dtype)
