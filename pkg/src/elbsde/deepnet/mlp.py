"""Fixed-depth feed-forward networks with ELU hidden layers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimMismatch, InvariantViolation
from . import autodiff as ad


def elu(z):
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


class MLP:
    """Affine layers ``dims[0] -> ... -> dims[-1]``; ELU between, identity on output.

    Weights are stored ``(out, in)`` so a layer computes ``x @ W.T + b``.
    """

    def __init__(self, dims, weights=None, biases=None):
        self.dims = tuple(int(d) for d in dims)
        if len(self.dims) < 2:
            raise ValueError("need at least input and output dims")
        if weights is None:
            weights = [np.zeros((o, i)) for i, o in zip(self.dims[:-1], self.dims[1:])]
        if biases is None:
            biases = [np.zeros(o) for o in self.dims[1:]]
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        for (i, o), W, b in zip(zip(self.dims[:-1], self.dims[1:]), self.weights, self.biases):
            if W.shape != (o, i) or b.shape != (o,):
                raise DimMismatch(f"layer shapes {W.shape}, {b.shape} do not match dims {self.dims}")

    @classmethod
    def initialized(cls, dims, rng: np.random.Generator, out_bias: float = 0.0) -> "MLP":
        """Glorot-uniform hidden layers, zero output layer with bias ``out_bias``."""
        net = cls(dims)
        for W in net.weights[:-1]:
            fan_out, fan_in = W.shape
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            W[...] = rng.uniform(-lim, lim, size=W.shape)
        net.biases[-1][...] = out_bias
        return net

    @property
    def d_in(self) -> int:
        return self.dims[0]

    @property
    def d_out(self) -> int:
        return self.dims[-1]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "MLP":
        return MLP(self.dims, [W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def forward(self, x) -> np.ndarray:
        return forward(self, x)

    def tensors(self) -> list[ad.Tensor]:
        """Trainable leaves sharing nothing with the stored arrays."""
        return [ad.param(p.copy()) for p in self.parameters()]

    def __eq__(self, other):
        return (
            isinstance(other, MLP)
            and self.dims == other.dims
            and all(np.array_equal(a, b) for a, b in zip(self.parameters(), other.parameters()))
        )


def forward(net: MLP, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.d_in:
        raise DimMismatch(f"expected {net.d_in} inputs, got {x.shape[-1]}")
    h = x
    last = len(net.weights) - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ W.T + b
        if i < last:
            h = elu(h)
    return h


def forward_tensor(params: list[ad.Tensor], x) -> ad.Tensor:
    """Same composition as :func:`forward` on autodiff tensors ``[W1, b1, W2, b2, ...]``."""
    h = ad.as_tensor(x)
    n_layers = len(params) // 2
    if h.shape[-1] != params[0].shape[1]:
        raise DimMismatch(f"expected {params[0].shape[1]} inputs, got {h.shape[-1]}")
    for i in range(n_layers):
        h = ad.affine(h, params[2 * i], params[2 * i + 1])
        if i < n_layers - 1:
            h = ad.elu(h)
    return h


@dataclass
class Normalizer:
    """Per-feature min-max map of ``[lo, hi]`` onto ``[-1, 1]`` (no clamping)."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if self.lo.shape != self.hi.shape or np.any(self.hi <= self.lo):
            raise InvariantViolation("normalizer", "need hi > lo for every feature")

    def __call__(self, x):
        return normalize(x, self)

    def denormalize(self, u):
        return self.lo + (np.asarray(u) + 1.0) * 0.5 * (self.hi - self.lo)

    def __eq__(self, other):
        return isinstance(other, Normalizer) and np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)


def normalize(x, nz: Normalizer):
    return 2.0 * (np.asarray(x, dtype=float) - nz.lo) / (nz.hi - nz.lo) - 1.0
