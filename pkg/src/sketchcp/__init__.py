"""Sketched CP decomposition of third-order tensors."""
from sketchcp.kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
