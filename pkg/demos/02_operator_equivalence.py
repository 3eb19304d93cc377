"""
The convolutional operator is the dense operator
================================================

Build both models for a small array, push the same random map through
them and compare. Then check the adjoint with a dot test.
"""

import numpy as np

from fmcconv.conv_model import (assemble_volume, build_kernel_bank, conv_adjoint, conv_forward,
                                slice_weights)
from fmcconv.dense_model import build_dense, dense_forward
from fmcconv.scene import AcquisitionConfig, square_roi

acq = AcquisitionConfig(n_c=8)
roi = square_roi(acq)
bank = build_kernel_bank(acq, roi)
dense = build_dense(acq, roi)
print("dense matrix", dense.shape, f"{dense.a.nbytes / 2**20:.1f} MiB")
print("kernel bank ", bank.coefficient_count(), "coefficients",
      f"{8 * bank.coefficient_count() / 2**20:.1f} MiB")

rng = np.random.default_rng(0)
x = rng.standard_normal(roi.shape)

# %%
# The convolutional model produces only the N_c distinct slices; the full
# volume is rebuilt by mirroring them (reciprocity).
slices = conv_forward(bank, x)
vol = assemble_volume(slices)
ref = dense_forward(dense, x)
err = np.max(np.abs(vol.ravel(order="F") - ref)) / np.max(np.abs(ref))
print(f"forward: max relative difference {err:.2e}")

# %%
# Slices above the diagonal stand for two A-scans each, hence the weights.
w = slice_weights(acq.n_c)
r = [rng.standard_normal(s.shape) for s in slices]
lhs = sum(wi * np.vdot(f, ri) for wi, f, ri in zip(w, slices, r))
rhs = np.vdot(x, conv_adjoint(bank, r, w))
print(f"adjoint: <Ax, r> = {lhs:.12e}, <x, A'r> = {rhs:.12e}")
