"""Adam with stepwise learning-rate decay, and an EMA parameter shadow."""

import numpy as np


class Adam:
    def __init__(self, params: dict, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / b1t
            v_hat = self.v[name] / b2t
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


class Ema:
    """shadow <- rate * shadow + (1 - rate) * param; rate 1.0 freezes it."""

    def __init__(self, params: dict, rate: float = 0.9999):
        self.rate = float(rate)
        self.shadow = {k: p.data.copy() for k, p in params.items()}

    def update(self, params: dict):
        r = self.rate
        for name, p in params.items():
            self.shadow[name] = r * self.shadow[name] + (1.0 - r) * p.data

    def state(self) -> dict:
        return {k: v.copy() for k, v in self.shadow.items()}
