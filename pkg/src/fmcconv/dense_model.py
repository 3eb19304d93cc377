"""Explicit dense model matrix and its block-Toeplitz slice matrices.

This is the brute-force reference for the convolutional operator. It is
only meant for small arrays and refuses to allocate beyond a memory budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import (AcquisitionConfig, RoiGrid, _check_geometry, _tof_table,
                    pulse_value, required_samples, vectorize)

__all__ = [
    "MemoryBudgetError",
    "DEFAULT_MEMORY_BUDGET",
    "build_block",
    "SliceMatrix",
    "build_slice_matrix",
    "DenseModel",
    "build_dense",
    "dense_forward",
    "verify_block_toeplitz",
    "dense_fista",
]

DEFAULT_MEMORY_BUDGET = 2 * 1024**3


class MemoryBudgetError(MemoryError):
    def __init__(self, required: int, budget: int):
        self.required = required
        self.budget = budget
        super().__init__(f"dense model needs {required} bytes, budget is {budget} bytes")


def build_block(delta: int, i_s: int, acq: AcquisitionConfig, roi: RoiGrid,
                n_t: int | None = None) -> np.ndarray:
    """``(n_t, n_z)`` block for transmitter-minus-scatterer offset ``delta``.

    Column ``i_z`` is the unit-amplitude A-scan of a scatterer at depth row
    ``i_z`` seen by a transmitter ``delta`` columns to its right and a
    receiver ``i_s`` elements further.
    """
    lo, hi = -(roi.n_x - 1), acq.n_c - 1 - i_s
    if not 0 <= i_s < acq.n_c:
        raise ValueError(f"slice index {i_s} outside [0, {acq.n_c})")
    if not lo <= delta <= hi:
        raise ValueError(f"delta {delta} outside [{lo}, {hi}] for slice {i_s}")
    if n_t is None:
        n_t = required_samples(acq, roi)
    taus = _tof_table(delta, i_s, np.arange(roi.n_z), acq, roi)
    t = np.arange(n_t)[:, None] / acq.f_s
    return pulse_value(t, taus[None, :], acq)


@dataclass(frozen=True)
class SliceMatrix:
    """Slice operator ``B`` mapping a vectorized map to the vectorized slice.

    Row block ``r`` is transmitter ``r`` (receiver ``r + i_s``), column block
    ``c`` is pixel column ``c``; each block is ``(n_t, n_z)``.
    """

    i_s: int
    b: np.ndarray
    n_t: int
    n_z: int
    blocks: dict

    @property
    def n_row_blocks(self) -> int:
        return self.b.shape[0] // self.n_t

    @property
    def n_col_blocks(self) -> int:
        return self.b.shape[1] // self.n_z

    def block(self, r: int, c: int) -> np.ndarray:
        return self.b[r * self.n_t:(r + 1) * self.n_t, c * self.n_z:(c + 1) * self.n_z]


def build_slice_matrix(i_s: int, acq: AcquisitionConfig, roi: RoiGrid,
                       n_t: int | None = None) -> SliceMatrix:
    _check_geometry(acq, roi)
    if n_t is None:
        n_t = required_samples(acq, roi)
    n_rows = acq.n_c - i_s
    # one block per diagonal, then tiled
    blocks = {d: build_block(d, i_s, acq, roi, n_t)
              for d in range(-(roi.n_x - 1), acq.n_c - i_s)}
    b = np.empty((n_rows * n_t, roi.n_x * roi.n_z))
    for r in range(n_rows):
        for c in range(roi.n_x):
            b[r * n_t:(r + 1) * n_t, c * roi.n_z:(c + 1) * roi.n_z] = blocks[r - c]
    return SliceMatrix(i_s=i_s, b=b, n_t=n_t, n_z=roi.n_z, blocks=blocks)


def verify_block_toeplitz(sm: SliceMatrix, tol: float = 0.0) -> bool:
    """True iff all blocks on each block diagonal agree within ``tol``."""
    first = {}
    for r in range(sm.n_row_blocks):
        for c in range(sm.n_col_blocks):
            blk = sm.block(r, c)
            ref = first.setdefault(r - c, blk)
            if blk is not ref and np.max(np.abs(blk - ref), initial=0.0) > tol:
                return False
    return True


@dataclass(frozen=True)
class DenseModel:
    """Dense FMC model. Rows follow the column-major flattening of the
    ``(n_t, n_r, n_t_elements)`` volume; columns follow the vectorized map."""

    a: np.ndarray
    n_t: int
    n_c: int
    roi: RoiGrid

    @property
    def shape(self):
        return self.a.shape


def dense_bytes(acq: AcquisitionConfig, roi: RoiGrid, itemsize: int = 8) -> int:
    return itemsize * required_samples(acq, roi) * acq.n_c**2 * roi.n_pixels


def build_dense(acq: AcquisitionConfig, roi: RoiGrid,
                memory_budget: int = DEFAULT_MEMORY_BUDGET) -> DenseModel:
    _check_geometry(acq, roi)
    need = dense_bytes(acq, roi)
    if need > memory_budget:
        raise MemoryBudgetError(need, memory_budget)
    n_t, n_c = required_samples(acq, roi), acq.n_c
    a = np.empty((n_t * n_c * n_c, roi.n_pixels))

    def rows(i_r, i_t):
        start = n_t * (i_r + n_c * i_t)
        return slice(start, start + n_t)

    for i_s in range(n_c):
        b = build_slice_matrix(i_s, acq, roi, n_t).b
        for i_t in range(n_c - i_s):
            part = b[i_t * n_t:(i_t + 1) * n_t]
            a[rows(i_t + i_s, i_t)] = part
            a[rows(i_t, i_t + i_s)] = part
    return DenseModel(a=a, n_t=n_t, n_c=n_c, roi=roi)


def dense_forward(model: DenseModel, x: np.ndarray) -> np.ndarray:
    """Noiseless ``A @ vec(x)`` for a ``(n_z, n_x)`` map or its vector."""
    x = np.asarray(x)
    v = vectorize(x) if x.ndim == 2 else x
    if v.shape != (model.a.shape[1],):
        raise ValueError(f"map of size {v.size} does not match model with {model.a.shape[1]} pixels")
    return model.a @ v


def dense_fista(a: np.ndarray, y: np.ndarray, lam: float, step_l: float,
                x0: np.ndarray, n_iter: int) -> list[np.ndarray]:
    """Textbook FISTA on an explicit matrix; returns every iterate.

    Used only to check the convolutional solver.
    """
    x_prev = np.array(x0, dtype=float)
    z = x_prev.copy()
    t = 1.0
    out = [x_prev.copy()]
    for _ in range(n_iter):
        grad = a.T @ (a @ z - y)
        u = z - grad / step_l
        x = np.sign(u) * np.maximum(np.abs(u) - lam / step_l, 0.0)
        t_next = (1 + np.sqrt(1 + 4 * t * t)) / 2
        z = x + ((t - 1) / t_next) * (x - x_prev)
        x_prev, t = x, t_next
        out.append(x.copy())
    return out
