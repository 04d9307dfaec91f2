"""Fair valuation of equity-linked life insurance portfolios by deep BSDEs."""

from .model import ModelParams, State

__version__ = "0.1.0"
__all__ = ["ModelParams", "State", "__version__"]
