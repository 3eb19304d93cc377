"""Convolutional FMC forward model.

Each slice ``i_s`` (A-scans with receiver index = transmitter index + i_s)
is produced by ``n_t`` strided 1D convolutions of the zero-padded,
column-major map vector with one kernel per time sample. The kernel of
row ``n`` spans all ``n_c - i_s + n_x - 1`` distinct blocks of the slice
matrix, so the bank is exactly as expressive as the dense model while
storing each block once.

Layout of a kernel row (length ``(n_c - i_s + n_x - 1) * n_z``): segment
``j`` holds the block for offset ``delta = n_c - 1 - i_s - j``, depth rows
in natural order. Equivalently, it is the row-reversal of the elongated
matrix whose segments run over increasing ``delta`` with depth reversed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dense_model import build_block
from .scene import (AcquisitionConfig, RoiGrid, _check_geometry,
                    required_samples, unvectorize, vectorize)

__all__ = [
    "KernelBank",
    "SliceSet",
    "build_kernel_bank",
    "elongated_matrix",
    "slice_weights",
    "strided_conv",
    "strided_conv_transpose",
    "strided_conv_kernel_grad",
    "conv_forward_slice",
    "conv_forward",
    "conv_adjoint",
    "assemble_volume",
    "extract_slices",
    "fold_constant",
    "kernel_coefficient_count",
    "dense_coefficient_count",
    "storage_bytes",
]

SliceSet = List[np.ndarray]


@dataclass
class KernelBank:
    kernels: list
    acq: AcquisitionConfig
    roi: RoiGrid
    n_t: int

    @property
    def n_c(self) -> int:
        return self.acq.n_c

    @property
    def dtype(self):
        return self.kernels[0].dtype

    def coefficient_count(self) -> int:
        return sum(int(k.size) for k in self.kernels)

    def scaled(self, c: float) -> "KernelBank":
        return KernelBank([c * k for k in self.kernels], self.acq, self.roi, self.n_t)

    def astype(self, dtype) -> "KernelBank":
        return KernelBank([k.astype(dtype) for k in self.kernels], self.acq, self.roi, self.n_t)

    def copy(self) -> "KernelBank":
        return KernelBank([k.copy() for k in self.kernels], self.acq, self.roi, self.n_t)


def elongated_matrix(i_s: int, acq: AcquisitionConfig, roi: RoiGrid,
                     n_t: int | None = None) -> np.ndarray:
    """Distinct blocks of slice ``i_s`` side by side, increasing ``delta``.

    Each block is reoriented (depth reversed) so that reversing a whole row
    yields a kernel for plain sliding dot products against the map vector.
    """
    if n_t is None:
        n_t = required_samples(acq, roi)
    deltas = range(-(roi.n_x - 1), acq.n_c - i_s)
    return np.concatenate([build_block(d, i_s, acq, roi, n_t)[:, ::-1] for d in deltas], axis=1)


def build_kernel_bank(acq: AcquisitionConfig, roi: RoiGrid, dtype=np.float64) -> KernelBank:
    _check_geometry(acq, roi)
    n_t = required_samples(acq, roi)
    kernels = [np.ascontiguousarray(elongated_matrix(i_s, acq, roi, n_t)[:, ::-1], dtype=dtype)
               for i_s in range(acq.n_c)]
    return KernelBank(kernels=kernels, acq=acq, roi=roi, n_t=n_t)


def slice_weights(n_c: int) -> np.ndarray:
    """Reciprocity multiplicities: the zero-offset slice appears once in the
    full volume, every other slice twice."""
    w = np.full(n_c, 2.0)
    w[0] = 1.0
    return w


def _as_vector(x, roi: RoiGrid) -> np.ndarray:
    x = np.asarray(x)
    if x.shape == roi.shape:
        return vectorize(x)
    if x.shape == (roi.n_pixels,):
        return x
    raise ValueError(f"map of shape {x.shape} does not match grid {roi.shape}")


def _windows(xvec: np.ndarray, n_z: int, n_out: int, klen: int, dtype) -> np.ndarray:
    # (n_out, klen) windows of the zero-padded vector, stride n_z
    pad = (n_out - 1) * n_z
    xp = np.zeros(xvec.size + 2 * pad, dtype=dtype)
    xp[pad:pad + xvec.size] = xvec
    # contiguous copy keeps the product on the BLAS path
    return np.ascontiguousarray(sliding_window_view(xp, klen)[::n_z])


def strided_conv(kernel: np.ndarray, xvec: np.ndarray, n_z: int, n_out: int) -> np.ndarray:
    """Sliding dot products of every kernel row with the map vector.

    The vector is zero-padded by ``(n_out - 1) * n_z`` on both ends and the
    window advances by ``n_z``. Returns ``(n_rows, n_out)``.
    """
    win = _windows(xvec, n_z, n_out, kernel.shape[1], np.result_type(xvec, kernel))
    return kernel @ win.T


def strided_conv_kernel_grad(r: np.ndarray, xvec: np.ndarray, n_z: int, klen: int) -> np.ndarray:
    """Gradient of ``<r, strided_conv(K, x)>`` with respect to ``K``."""
    win = _windows(xvec, n_z, r.shape[1], klen, np.result_type(xvec, r))
    return r @ win


def strided_conv_transpose(kernel: np.ndarray, r: np.ndarray, n_z: int, n_pix: int) -> np.ndarray:
    """Exact transpose of :func:`strided_conv` with respect to the map vector."""
    n_out = r.shape[1]
    pad = (n_out - 1) * n_z
    klen = kernel.shape[1]
    rows = r.T @ kernel
    xp = np.zeros(n_pix + 2 * pad, dtype=rows.dtype)
    for m in range(n_out):
        xp[m * n_z:m * n_z + klen] += rows[m]
    return xp[pad:pad + n_pix]


def conv_forward_slice(bank: KernelBank, x, i_s: int) -> np.ndarray:
    """Slice ``i_s`` as an ``(n_t, n_c - i_s)`` array; column ``i_t`` is the
    A-scan of transmitter ``i_t`` and receiver ``i_t + i_s``."""
    v = _as_vector(x, bank.roi)
    return strided_conv(bank.kernels[i_s], v, bank.roi.n_z, bank.n_c - i_s)


def conv_forward(bank: KernelBank, x) -> SliceSet:
    v = _as_vector(x, bank.roi)
    return [strided_conv(k, v, bank.roi.n_z, bank.n_c - i_s) for i_s, k in enumerate(bank.kernels)]


def _check_slices(bank: KernelBank, r: Sequence[np.ndarray]) -> None:
    if len(r) != bank.n_c:
        raise ValueError(f"expected {bank.n_c} slices, got {len(r)}")
    for i_s, s in enumerate(r):
        if s.shape != (bank.n_t, bank.n_c - i_s):
            raise ValueError(f"slice {i_s} has shape {s.shape}, expected {(bank.n_t, bank.n_c - i_s)}")


def conv_adjoint(bank: KernelBank, r: Sequence[np.ndarray], weights=None) -> np.ndarray:
    """``sum_s w[s] * B_s^T r_s`` as an ``(n_z, n_x)`` map.

    With the default reciprocity weights this is the gradient operator of
    the full-volume least-squares term.
    """
    _check_slices(bank, r)
    if weights is None:
        weights = slice_weights(bank.n_c)
    roi = bank.roi
    acc = np.zeros(roi.n_pixels, dtype=np.result_type(bank.dtype, *r))
    for i_s, (k, rs) in enumerate(zip(bank.kernels, r)):
        if weights[i_s] != 0:
            acc += weights[i_s] * strided_conv_transpose(k, rs, roi.n_z, roi.n_pixels)
    return unvectorize(acc, roi)


def assemble_volume(s: Sequence[np.ndarray]) -> np.ndarray:
    """Place slices into the ``(n_t, n_r, n_t_elements)`` volume, mirrored."""
    n_c = len(s)
    n_t = s[0].shape[0]
    vol = np.zeros((n_t, n_c, n_c), dtype=np.result_type(*s))
    idx = np.arange(n_c)
    for i_s, sl in enumerate(s):
        i_t = idx[:n_c - i_s]
        vol[:, i_t + i_s, i_t] = sl
        vol[:, i_t, i_t + i_s] = sl
    return vol


def extract_slices(v: np.ndarray) -> SliceSet:
    """Fold a volume into its unique slices, averaging reciprocal pairs."""
    if v.ndim != 3 or v.shape[1] != v.shape[2]:
        raise ValueError(f"expected an (n_t, n_c, n_c) volume, got shape {v.shape}")
    n_c = v.shape[1]
    idx = np.arange(n_c)
    out = [v[:, idx, idx].copy()]
    for i_s in range(1, n_c):
        i_t = idx[:n_c - i_s]
        out.append((v[:, i_t + i_s, i_t] + v[:, i_t, i_t + i_s]) / 2)
    return out


def fold_constant(v: np.ndarray) -> float:
    """Part of the full-volume squared error lost by folding: half the
    squared mismatch between reciprocal A-scans."""
    n_c = v.shape[1]
    idx = np.arange(n_c)
    c = 0.0
    for i_s in range(1, n_c):
        i_t = idx[:n_c - i_s]
        d = v[:, i_t + i_s, i_t] - v[:, i_t, i_t + i_s]
        c += 0.5 * float(np.sum(d * d))
    return c


def kernel_coefficient_count(n_t: int, n_c: int, n_x: int, n_z: int) -> int:
    n_t, n_c, n_x, n_z = int(n_t), int(n_c), int(n_x), int(n_z)
    return n_t * n_z * (n_c * (n_x - 1) + n_c * (n_c + 1) // 2)


def dense_coefficient_count(n_t: int, n_c: int, n_x: int, n_z: int) -> int:
    n_t, n_c, n_x, n_z = int(n_t), int(n_c), int(n_x), int(n_z)
    return n_t * n_c * n_c * n_z * n_x


def storage_bytes(kind: str, acq: AcquisitionConfig, roi: RoiGrid,
                  bytes_per_param: int = 4) -> int:
    """Parameter storage of the dense or convolutional model, in bytes."""
    n_t = required_samples(acq, roi)
    if kind == "dense":
        count = dense_coefficient_count(n_t, acq.n_c, roi.n_x, roi.n_z)
    elif kind == "conv":
        count = kernel_coefficient_count(n_t, acq.n_c, roi.n_x, roi.n_z)
    else:
        raise ValueError(f"kind must be 'dense' or 'conv', got {kind!r}")
    return int(bytes_per_param) * count
