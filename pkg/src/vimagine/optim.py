"""Named parameter collections and the RMSProp update."""

import hashlib

import numpy as np

from .errors import ConfigurationError, InvariantError


class ParamStore:
    """Ordered name -> Tensor mapping for trainable parameters.

    Insertion order is the iteration order, which makes checkpoint
    layout and optimizer state deterministic.
    """

    def __init__(self):
        self._params = {}

    def add(self, name, t):
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter name: {name}")
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def merge(self, prefix, other):
        for name, t in other.items():
            self.add(f"{prefix}.{name}", t)
        return self

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def checksum(self):
        """Digest of names and raw values; used to prove update isolation."""
        h = hashlib.sha256()
        for name, t in self._params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()


class OptimizerState:
    """Per-parameter squared-gradient accumulators plus hyperparameters."""

    def __init__(self, lr=5e-5, decay=0.9, eps=1e-10):
        self.lr = float(lr)
        self.decay = float(decay)
        self.eps = float(eps)
        self.acc = {}

    def accumulator(self, name, like):
        if name not in self.acc:
            self.acc[name] = np.zeros_like(like)
        return self.acc[name]


def rmsprop_step(params, state):
    """One RMSProp update over every parameter in the store.

    acc <- decay*acc + (1-decay)*g^2 ; p <- p - lr*g/(sqrt(acc)+eps).
    Gradients are consumed: each step requires a fresh backward pass.
    """
    for name, p in params.items():
        if p.grad is None:
            raise InvariantError(f"rmsprop_step: parameter {name} has no gradient")
        g = p.grad
        acc = state.accumulator(name, p.data)
        acc *= state.decay
        acc += (1.0 - state.decay) * g * g
        p.data -= state.lr * g / (np.sqrt(acc) + state.eps)
        p.grad = None
    return params


def clip_params(params, c):
    """Clamp every parameter entry to [-c, c] in place."""
    if c <= 0:
        raise ConfigurationError(f"clip_params needs c > 0, got {c}")
    for _, p in params.items():
        np.clip(p.data, -c, c, out=p.data)
    return params
