"""Block-convolutional forward model for ultrasound full matrix capture.

The dense FMC model matrix is block-Toeplitz per transmit/receive slice, so
it can be replaced by a bank of 1-D kernels applied as strided
convolutions. On top of that operator the package provides a matrix-free
FISTA solver and an unrolled, trainable LISTA network.

Submodules
----------
scene        geometry, pulse model, time of flight, direct simulator
dense_model  explicit model matrix (reference only)
conv_model   kernel bank, strided convolution forward/adjoint, storage model
solver       LASSO problem, power iteration, FISTA / ISTA
bclista      unrolled network, hand-written gradients, Adam training
io           tensor container, configs, CSV and PGM
cli          ``fmcconv`` command line tool
"""

from .conv_model import (KernelBank, assemble_volume, build_kernel_bank, conv_adjoint,
                         conv_forward, extract_slices, slice_weights, storage_bytes)
from .scene import AcquisitionConfig, RoiGrid, ScattererList, square_roi, simulate_fmc
from .solver import LassoProblem, bc_fista, lambda_max, lipschitz_estimate

__version__ = "0.1.0"

__all__ = [
    "AcquisitionConfig",
    "RoiGrid",
    "ScattererList",
    "square_roi",
    "simulate_fmc",
    "KernelBank",
    "build_kernel_bank",
    "conv_forward",
    "conv_adjoint",
    "assemble_volume",
    "extract_slices",
    "slice_weights",
    "storage_bytes",
    "LassoProblem",
    "bc_fista",
    "lambda_max",
    "lipschitz_estimate",
]
