"""Adam optimizer and global-norm gradient clipping."""

from __future__ import annotations

import numpy as np

from .autodiff import ParameterSet

__all__ = ["AdamState", "Adam", "clip_global_norm", "global_norm"]


class AdamState:
    """First/second moment estimates and step counter for one parameter."""

    __slots__ = ("m", "v", "t")

    def __init__(self, shape, dtype):
        self.m = np.zeros(shape, dtype=dtype)
        self.v = np.zeros(shape, dtype=dtype)
        self.t = 0


class Adam:
    """Adam with bias correction, applied lazily per parameter.

    Moments exist only for parameters that have received at least one update;
    each parameter keeps its own step counter so bias correction stays exact
    when training alternates between task-specific parameter subsets.
    """

    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"Adam: lr must be positive, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state: dict[str, AdamState] = {}

    def step(self, params: ParameterSet, grads: dict[str, np.ndarray], lr: float | None = None) -> None:
        """Update every parameter named in `grads` in place."""
        lr = self.lr if lr is None else lr
        for name, g in grads.items():
            p = params[name]
            if g.shape != p.data.shape:
                raise ValueError(f"Adam: gradient shape {g.shape} != parameter shape {p.data.shape} for {name!r}")
            st = self.state.get(name)
            if st is None:
                st = self.state[name] = AdamState(p.data.shape, p.data.dtype)
            st.t += 1
            st.m = self.beta1 * st.m + (1.0 - self.beta1) * g
            st.v = self.beta2 * st.v + (1.0 - self.beta2) * (g * g)
            m_hat = st.m / (1.0 - self.beta1**st.t)
            v_hat = st.v / (1.0 - self.beta2**st.t)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "state": {
                name: {"t": st.t, "m": st.m.ravel().tolist(), "v": st.v.ravel().tolist(), "shape": list(st.m.shape)}
                for name, st in self.state.items()
            },
        }

    @classmethod
    def from_state_dict(cls, d: dict, dtype=np.float64) -> "Adam":
        opt = cls(lr=d["lr"], beta1=d["beta1"], beta2=d["beta2"], eps=d["eps"])
        for name, entry in d["state"].items():
            st = AdamState(tuple(entry["shape"]), dtype)
            st.t = entry["t"]
            st.m = np.asarray(entry["m"], dtype=dtype).reshape(entry["shape"])
            st.v = np.asarray(entry["v"], dtype=dtype).reshape(entry["shape"])
            opt.state[name] = st
        return opt


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Scale all gradients by max_norm/N when their global L2 norm N exceeds max_norm."""
    if max_norm <= 0:
        raise ValueError(f"clip_global_norm: max_norm must be positive, got {max_norm}")
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}
