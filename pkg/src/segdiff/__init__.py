"""Desk-scale conditional denoising-diffusion image segmentation."""

__version__ = "0.1.0"

from .kernels import backend_name

__all__ = ["backend_name", "__version__"]
