"""First-order optimizers over :class:`~panelmdp.nn.layers.Param` lists."""

from __future__ import annotations

import numpy as np

from ..exceptions import NumericError


def _check_grads(params):
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in {p.name}")


def _shared_buffers(params):
    """The flat ``(values, grads)`` buffers if every param is a view into them."""
    if not params:
        return None
    vbase, gbase = params[0].value.base, params[0].grad.base
    if vbase is None or gbase is None:
        return None
    if any(p.value.base is not vbase or p.grad.base is not gbase for p in params):
        return None
    if vbase.size != sum(p.value.size for p in params) or vbase.ndim != 1:
        return None
    return vbase, gbase


class SGD:
    """Plain gradient descent: ``value -= lr * grad``, then clear gradients.

    Parameters laid out by :func:`~panelmdp.nn.layers.flatten_params` are
    updated through their shared buffer.
    """

    kind = "sgd"

    def __init__(self, params, learning_rate: float):
        self.params = list(params)
        self.learning_rate = float(learning_rate)
        self.steps = 0
        flat = _shared_buffers(self.params)
        if flat is None:
            self._values = [p.value for p in self.params]
            self._grads = [p.grad for p in self.params]
        else:
            self._values, self._grads = [flat[0]], [flat[1]]

    def _check(self):
        for g in self._grads:
            if not np.all(np.isfinite(g)):
                _check_grads(self.params)
                raise NumericError("non-finite gradient")

    def step(self):
        self._check()
        for v, g in zip(self._values, self._grads):
            if self.learning_rate:
                v -= self.learning_rate * g
            g.fill(0.0)
        self.steps += 1

    def state_tensors(self) -> dict[str, np.ndarray]:
        return {}

    def load_state_tensors(self, tensors):
        pass


class Adam(SGD):
    """Adam with bias correction; same step/clear contract as :class:`SGD`."""

    kind = "adam"

    def __init__(self, params, learning_rate: float, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(params, learning_rate)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(v) for v in self._values]
        self.v = [np.zeros_like(v) for v in self._values]

    def step(self):
        self._check()
        self.steps += 1
        c1 = 1.0 - self.beta1**self.steps
        c2 = 1.0 - self.beta2**self.steps
        for val, g, m, v in zip(self._values, self._grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.learning_rate:
                val -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)
            g.fill(0.0)

    def _per_param(self, bufs):
        if len(bufs) == len(self.params):
            return bufs
        out, off = [], 0
        for p in self.params:
            out.append(bufs[0][off : off + p.value.size].reshape(p.value.shape))
            off += p.value.size
        return out

    def state_tensors(self):
        out = {}
        for p, m, v in zip(self.params, self._per_param(self.m), self._per_param(self.v)):
            out[f"adam.m.{p.name}"] = m
            out[f"adam.v.{p.name}"] = v
        return out

    def load_state_tensors(self, tensors):
        for p, m, v in zip(self.params, self._per_param(self.m), self._per_param(self.v)):
            m[...] = tensors[f"adam.m.{p.name}"]
            v[...] = tensors[f"adam.v.{p.name}"]


def make_optimizer(kind: str, params, learning_rate: float):
    if kind == "sgd":
        return SGD(params, learning_rate)
    if kind == "adam":
        return Adam(params, learning_rate)
    raise ValueError(f"unknown optimizer {kind!r}")


def optimizer_step(params, learning_rate: float):
    """One plain gradient-descent step over ``params``; gradients are cleared."""
    SGD(params, learning_rate).step()
    return params
