"""View-invariant movement quality scoring on joint-heatmap videos."""

__version__ = "0.1.0"

from .tensor import Parameter, Tensor, backward

__all__ = ["Parameter", "Tensor", "backward", "__version__"]
