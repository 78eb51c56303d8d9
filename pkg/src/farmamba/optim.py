"""Adam over a named parameter tree, with state that round-trips through checkpoints."""
from __future__ import annotations

import numpy as np

from .params import ParamTree


class Adam:
    def __init__(self, params: ParamTree, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.b1**t
        c2 = 1.0 - self.b2**t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self, dtype) -> dict[str, np.ndarray]:
        out = {f"optim.m.{k}": a for k, a in self.m.items()}
        out.update({f"optim.v.{k}": a for k, a in self.v.items()})
        out["optim.step"] = np.array([self.step_count], dtype=dtype)
        return out

    def load_state_arrays(self, arrays) -> None:
        for k in self.params:
            self.m[k] = np.array(arrays[f"optim.m.{k}"], dtype=self.m[k].dtype).reshape(self.m[k].shape)
            self.v[k] = np.array(arrays[f"optim.v.{k}"], dtype=self.v[k].dtype).reshape(self.v[k].shape)
        self.step_count = int(np.asarray(arrays["optim.step"]).ravel()[0])
