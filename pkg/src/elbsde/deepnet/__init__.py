"""From-scratch approximators: MLP, min-max normaliser, reverse-mode gradients, Adam."""

from .adam import AdamState, adam_step
from .autodiff import Tensor, backward, param
from .checkpoint import read_checkpoint, write_checkpoint
from .mlp import MLP, Normalizer, elu, forward, forward_tensor, normalize


def gradient(loss: Tensor, params):
    """Gradients of a scalar ``loss`` with respect to ``params`` (autodiff leaves)."""
    for p in params:
        p.grad = None
    backward(loss)
    return [p.grad if p.grad is not None else p.value * 0.0 for p in params]


__all__ = [
    "AdamState", "MLP", "Normalizer", "Tensor", "adam_step", "backward", "elu", "forward",
    "forward_tensor", "gradient", "normalize", "param", "read_checkpoint", "write_checkpoint",
]
