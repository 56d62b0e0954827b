"""Adam optimizer with bias correction; update is lr * m_hat / (sqrt(v_hat) + eps)."""

import numpy as np


class AdamState:
    """Per-parameter first/second moment buffers plus the step counter."""

    def __init__(self, lr=0.001, b1=0.9, b2=0.999, eps=1e-8):
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
            raise ValueError("decay rates must lie in [0, 1)")
        self.lr = lr
        self.b1 = b1
        self.b2 = b2
        self.eps = eps
        self.step = 0
        self.m = {}
        self.v = {}


def adam_step(params, grads, state):
    """One in-place Adam update.

    params: dict name -> Tensor; grads: dict name -> ndarray (missing or None
    means zero gradient). Returns the mutated (params, state) pair.
    """
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m = state.b1 * m + (1.0 - state.b1) * g
        v = state.b2 * v + (1.0 - state.b2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - state.b1**t)
        v_hat = v / (1.0 - state.b2**t)
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(
            p.dtype, copy=False
        )
    return params, state


class Adam:
    """Convenience wrapper driving ``adam_step`` from Tensor ``.grad`` fields."""

    def __init__(self, params, lr=0.001, b1=0.9, b2=0.999, eps=1e-8):
        self.params = dict(params)
        self.state = AdamState(lr=lr, b1=b1, b2=b2, eps=eps)

    def step(self):
        grads = {name: p.grad for name, p in self.params.items()}
        adam_step(self.params, grads, self.state)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()
