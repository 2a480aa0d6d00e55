"""Adam and plain gradient-descent steppers over name -> ndarray parameter dicts."""

import numpy as np


class Adam:
    def __init__(self, tensors, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.tensors = tensors
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in tensors.items()}

    def step(self, grads):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, p in self.tensors.items():
            g = grads[k].astype(p.dtype, copy=False)
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


class Sgd:
    def __init__(self, tensors, lr):
        self.tensors = tensors
        self.lr = lr

    def step(self, grads):
        for k, p in self.tensors.items():
            p -= self.lr * grads[k].astype(p.dtype, copy=False)


def make_optimizer(kind, tensors, lr, **kwargs):
    if kind == "adam":
        return Adam(tensors, lr, **kwargs)
    if kind == "sgd":
        return Sgd(tensors, lr)
    raise ValueError(f"unknown optimizer {kind!r}")
