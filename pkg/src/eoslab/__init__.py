"""Numerical laboratory for sharpness reduction of GD with weight decay on
scale-invariant losses."""

__version__ = "0.1.0"

from .silo import DomainError, Example3D, LinRegBN, MatComBN, fd_grad, fd_hvp  # noqa: E402
from .spectra import lanczos_top, spherical_sharpness  # noqa: E402

__all__ = [
    "__version__",
    "DomainError",
    "Example3D",
    "LinRegBN",
    "MatComBN",
    "fd_grad",
    "fd_hvp",
    "lanczos_top",
    "spherical_sharpness",
]
