"""
Sparse reconstruction with FISTA
================================

Simulate FMC data for three point scatterers with the direct simulator,
add a little noise, fold the volume into slices and solve the LASSO
problem with the convolutional operator. The result is written as a PGM
next to this script.
"""

from pathlib import Path

import numpy as np

from fmcconv.conv_model import build_kernel_bank, extract_slices
from fmcconv.io import write_pgm
from fmcconv.scene import AcquisitionConfig, ScattererList, square_roi, simulate_fmc
from fmcconv.solver import LassoProblem, bc_fista, lambda_max

acq = AcquisitionConfig(n_c=16, noise_std=0.02)
roi = square_roi(acq)
scat = ScattererList([(3, 4, 1.0), (8, 10, 0.7), (12, 5, -0.8)])
vol = simulate_fmc(scat, acq, roi, rng_seed=1)
y = extract_slices(vol)

bank = build_kernel_bank(acq, roi)
lam = 0.05 * lambda_max(bank, y)
res = bc_fista(LassoProblem(bank, y, lam), n_iter=200)
print(f"step constant L = {res.step_l:.4g}")
print(f"objective: start {res.trace[0]:.4g}, end {res.trace[-1]:.4g}")

# %%
# The three largest pixels of the estimate should sit on the scatterers.
x_true = scat.to_map(roi)
top = np.argsort(np.abs(res.x).ravel())[::-1][:3]
print("true support     ", sorted(zip(*map(np.ndarray.tolist, np.nonzero(x_true)))))
print("largest estimates", sorted(zip(*map(np.ndarray.tolist, np.unravel_index(top, roi.shape)))))
err = np.linalg.norm(res.x - x_true) / np.linalg.norm(x_true)
print(f"relative error {err:.3f}")

out = Path(__file__).with_name("fista_reconstruction.pgm")
write_pgm(out, res.x, comment="FISTA, 200 iterations")
print("wrote", out)
