"""Audio embedding extraction writing the shared dataset format."""

from .backends import EXPECTED_DIM

__version__ = "0.1.0"
__all__ = ["EXPECTED_DIM", "__version__"]
