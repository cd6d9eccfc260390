"""Highway deep neural networks with tied gates, trained from scratch."""

from hdnn.linalg import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
