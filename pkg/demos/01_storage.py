"""
How much memory does each forward model need?
=============================================

The dense model stores one column per pixel and one row per time sample
of every transmitter/receiver pair. The convolutional model keeps only
the distinct blocks of each slice, one kernel row per time sample.
This script prints both for growing arrays with the square grid used
throughout (as many pixels per side as elements, pixel pitch = element
pitch).
"""

from fmcconv.conv_model import storage_bytes
from fmcconv.scene import AcquisitionConfig, square_roi, required_samples

GIB = 2**30

print(f"{'N_c':>5} {'N_t':>6} {'dense GiB':>12} {'conv GiB':>10} {'ratio':>8}")
for n_c in (8, 16, 32, 64, 128):
    acq = AcquisitionConfig(n_c=n_c)
    roi = square_roi(acq)
    dense = storage_bytes("dense", acq, roi)
    conv = storage_bytes("conv", acq, roi)
    print(f"{n_c:5d} {required_samples(acq, roi):6d} {dense / GIB:12.3f} {conv / GIB:10.3f} "
          f"{dense / conv:8.2f}")

# %%
# The record length N_t cancels in the ratio, so the ratio depends only on
# the array size: N_c^2 N_x / (N_c (N_x - 1) + N_c (N_c + 1) / 2), which is
# about 85.6 at 128 elements.
