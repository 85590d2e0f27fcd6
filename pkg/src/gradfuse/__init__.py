"""Pansharpening with a learned gradient prior and a quadratic fusion energy."""

from .raster import MultiBandImage, normalize, read_image, write_image
from .operators import DegradationSpec, mtf_gaussian_kernel
from .solver import FusionParams, admm_fuse, cg_solve, energy_eval
from .metrics import QualityReport, quality_report

__version__ = "0.1.0"
