"""Acquisition geometry, pulse model, time of flight and a direct
point-scatterer simulator for full matrix capture (FMC) with a uniform
linear array.

Element ``i`` sits at lateral position ``i * d_c`` on the surface (depth 0).
Pixel ``(i_z, i_x)`` of the region of interest sits at
``(i_x * d_x, i_z * d_z + d_s)``. Reflectivity maps are ``(n_z, n_x)``
arrays and are vectorized column-major, depth index fastest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "AcquisitionConfig",
    "RoiGrid",
    "ScattererList",
    "vectorize",
    "unvectorize",
    "tof",
    "pulse_value",
    "tail_time",
    "required_samples",
    "simulate_ascan",
    "simulate_fmc",
    "square_roi",
]


@dataclass(frozen=True)
class AcquisitionConfig:
    """Array and pulse parameters.

    Every element both transmits and receives, so ``n_t_elements`` and
    ``n_r_elements`` both equal ``n_c``.
    """

    n_c: int
    d_c: float = 0.5e-3
    f_c: float = 5e6
    alpha: float = 2.5e12
    f_s: float = 20e6
    c0: float = 1480.0
    noise_std: float = 0.0
    envelope_eps: float = 1e-3

    def __post_init__(self):
        if int(self.n_c) != self.n_c or self.n_c < 1:
            raise ValueError(f"n_c must be a positive integer, got {self.n_c!r}")
        for name in ("d_c", "f_c", "alpha", "f_s", "c0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if not self.noise_std >= 0:
            raise ValueError(f"noise_std must be non-negative, got {self.noise_std!r}")
        if not 0 < self.envelope_eps < 1:
            raise ValueError(f"envelope_eps must lie in (0, 1), got {self.envelope_eps!r}")

    @property
    def n_t_elements(self) -> int:
        return self.n_c

    @property
    def n_r_elements(self) -> int:
        return self.n_c


@dataclass(frozen=True)
class RoiGrid:
    """Pixel grid of the region of interest, ``d_s`` below the array."""

    n_x: int
    n_z: int
    d_x: float
    d_z: float
    d_s: float

    def __post_init__(self):
        for name in ("n_x", "n_z"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        for name in ("d_x", "d_z", "d_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")

    @property
    def depth(self) -> float:
        return self.n_z * self.d_z

    @property
    def width(self) -> float:
        return self.n_x * self.d_x

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_z, self.n_x)

    @property
    def n_pixels(self) -> int:
        return self.n_z * self.n_x


def square_roi(acq: AcquisitionConfig) -> RoiGrid:
    """Square grid used for the storage sweep: ``n_x = n_z = n_c``,
    ``d_x = d_z = d_c`` and a standoff equal to the ROI depth."""
    n = acq.n_c
    return RoiGrid(n_x=n, n_z=n, d_x=acq.d_c, d_z=acq.d_c, d_s=n * acq.d_c)


@dataclass
class ScattererList:
    """Point scatterers given by pixel indices and reflectivity.

    Negative amplitudes model phase-inverted echoes.
    """

    entries: list[tuple[int, int, float]] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def validate(self, roi: RoiGrid) -> None:
        for i_x, i_z, _ in self.entries:
            if not (0 <= i_x < roi.n_x and 0 <= i_z < roi.n_z):
                raise ValueError(f"scatterer ({i_x}, {i_z}) outside {roi.n_x}x{roi.n_z} grid")

    def to_map(self, roi: RoiGrid) -> np.ndarray:
        self.validate(roi)
        x = np.zeros(roi.shape)
        for i_x, i_z, a in self.entries:
            x[i_z, i_x] += a
        return x

    @classmethod
    def from_map(cls, x: np.ndarray) -> "ScattererList":
        iz, ix = np.nonzero(x)
        order = np.lexsort((iz, ix))
        return cls([(int(ix[k]), int(iz[k]), float(x[iz[k], ix[k]])) for k in order])


def vectorize(x: np.ndarray) -> np.ndarray:
    """Column-major vectorization: ``vec[i_x * n_z + i_z] == x[i_z, i_x]``."""
    return np.asarray(x).ravel(order="F")


def unvectorize(v: np.ndarray, roi: RoiGrid) -> np.ndarray:
    return np.asarray(v).reshape(roi.shape, order="F")


def _check_geometry(acq: AcquisitionConfig, roi: RoiGrid) -> None:
    if not math.isclose(roi.d_x, acq.d_c, rel_tol=1e-12):
        raise ValueError(f"pixel width d_x={roi.d_x} must equal pitch d_c={acq.d_c}")


def _tof_table(deltas, i_s, i_z, acq: AcquisitionConfig, roi: RoiGrid):
    # deltas, i_s, i_z broadcast against each other.
    deltas = np.asarray(deltas, dtype=float)
    depth = np.asarray(i_z, dtype=float) * roi.d_z + roi.d_s
    lat_t = deltas * roi.d_x
    lat_r = (deltas + np.asarray(i_s, dtype=float)) * roi.d_x
    return (np.sqrt(lat_t**2 + depth**2) + np.sqrt(lat_r**2 + depth**2)) / acq.c0


def tof(delta: int, i_s: int, i_z: int, acq: AcquisitionConfig, roi: RoiGrid) -> float:
    """Time of flight for transmitter-minus-scatterer offset ``delta``.

    The transmitter is ``delta`` pitches to the right of the scatterer column
    and the receiver ``i_s`` further. The result only depends on
    ``(delta, i_s, i_z)``, which is what makes each slice block-Toeplitz.
    """
    if not 0 <= i_s < acq.n_c:
        raise ValueError(f"slice index {i_s} outside [0, {acq.n_c})")
    if not 0 <= i_z < roi.n_z:
        raise ValueError(f"depth index {i_z} outside [0, {roi.n_z})")
    lo, hi = -(roi.n_x - 1), acq.n_c - 1 - i_s
    if not lo <= delta <= hi:
        raise ValueError(f"delta {delta} outside [{lo}, {hi}] for slice {i_s}")
    return float(_tof_table(delta, i_s, i_z, acq, roi))


# exp(-460) ~ 1e-200; deeper tails are flushed to zero so that products in
# the operators never go subnormal (which is ~10x slower on x86)
_FLUSH_EXPONENT = 460.0


def pulse_value(t, tau, acq: AcquisitionConfig):
    """Unit-amplitude Gabor echo centred at ``tau``. Broadcasts."""
    dt = np.asarray(t) - np.asarray(tau)
    arg = acq.alpha * dt**2
    env = np.where(arg < _FLUSH_EXPONENT, np.exp(-np.minimum(arg, _FLUSH_EXPONENT)), 0.0)
    return env * np.cos(2 * np.pi * acq.f_c * dt)


def tail_time(acq: AcquisitionConfig) -> float:
    """Half-width at which the pulse envelope falls to ``envelope_eps``."""
    return math.sqrt(math.log(1.0 / acq.envelope_eps) / acq.alpha)


def max_tof(acq: AcquisitionConfig, roi: RoiGrid) -> float:
    """Largest time of flight over all transmitter/receiver/pixel triples."""
    # the ToF is convex in delta and increasing in depth, so the deepest row
    # and the delta extremes of each slice bound it
    i_s = np.arange(acq.n_c)
    lo = np.full(acq.n_c, -(roi.n_x - 1))
    hi = acq.n_c - 1 - i_s
    both = np.stack([_tof_table(lo, i_s, roi.n_z - 1, acq, roi),
                     _tof_table(hi, i_s, roi.n_z - 1, acq, roi)])
    return float(both.max())


def required_samples(acq: AcquisitionConfig, roi: RoiGrid) -> int:
    """Number of samples per A-scan.

    Sample ``n`` is taken at ``n / f_s``. The last sample lies at or beyond
    the latest echo centre plus the envelope tail, so every echo has decayed
    below ``envelope_eps`` by the end of the record.
    """
    return int(math.ceil(acq.f_s * (max_tof(acq, roi) + tail_time(acq)))) + 1


def _noise_rng(seed, i_t: int, i_r: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(i_t), int(i_r)])


def simulate_ascan(i_t: int, i_r: int, scatterers: ScattererList | Iterable,
                   acq: AcquisitionConfig, roi: RoiGrid, rng_seed=0,
                   n_t: int | None = None) -> np.ndarray:
    """Direct superposition of echoes for one transmitter/receiver pair.

    Distances are computed from explicit element and pixel coordinates, not
    through :func:`tof`, so this serves as an independent reference. Noise
    depends only on ``(rng_seed, i_t, i_r)``.
    """
    if not (0 <= i_t < acq.n_c and 0 <= i_r < acq.n_c):
        raise ValueError(f"element pair ({i_t}, {i_r}) outside array of {acq.n_c}")
    if n_t is None:
        n_t = required_samples(acq, roi)
    t = np.arange(n_t) / acq.f_s
    out = np.zeros(n_t)
    xt, xr = i_t * acq.d_c, i_r * acq.d_c
    for i_x, i_z, a in scatterers:
        if not (0 <= i_x < roi.n_x and 0 <= i_z < roi.n_z):
            raise ValueError(f"scatterer ({i_x}, {i_z}) outside grid")
        px, pz = i_x * roi.d_x, i_z * roi.d_z + roi.d_s
        tau = (math.hypot(xt - px, pz) + math.hypot(xr - px, pz)) / acq.c0
        out += a * pulse_value(t, tau, acq)
    if acq.noise_std > 0:
        out += acq.noise_std * _noise_rng(rng_seed, i_t, i_r).standard_normal(n_t)
    return out


def simulate_fmc(scatterers: ScattererList | Sequence, acq: AcquisitionConfig,
                 roi: RoiGrid, rng_seed=0) -> np.ndarray:
    """Full ``(n_t, n_r, n_t_elements)`` FMC volume by direct simulation.

    Axis order is time, receiver, transmitter.
    """
    n_t = required_samples(acq, roi)
    vol = np.empty((n_t, acq.n_c, acq.n_c))
    for i_t in range(acq.n_c):
        for i_r in range(acq.n_c):
            vol[:, i_r, i_t] = simulate_ascan(i_t, i_r, scatterers, acq, roi, rng_seed, n_t)
    return vol
