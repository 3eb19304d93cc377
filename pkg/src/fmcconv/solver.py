"""BC-FISTA: FISTA for the LASSO problem on the convolutional operator.

Gradients come from the analytic adjoint; nothing here touches a dense
matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conv_model import KernelBank, conv_adjoint, conv_forward, slice_weights

__all__ = [
    "NumericalError",
    "LassoProblem",
    "FistaState",
    "FistaResult",
    "PowerIterationResult",
    "soft_threshold",
    "lipschitz_estimate",
    "lasso_objective",
    "data_gradient",
    "lambda_max",
    "fista_step",
    "bc_fista",
    "ista",
    "next_momentum",
]


class NumericalError(FloatingPointError):
    pass


@dataclass
class LassoProblem:
    """``min_x 0.5 * sum_s w[s] ||B_s x - y_s||^2 + lam * ||x||_1``."""

    bank: KernelBank
    y: list
    lam: float
    weights: np.ndarray = None

    def __post_init__(self):
        if self.weights is None:
            self.weights = slice_weights(self.bank.n_c)
        if not self.lam >= 0:
            raise ValueError(f"lam must be non-negative, got {self.lam!r}")
        if len(self.y) != self.bank.n_c:
            raise ValueError(f"expected {self.bank.n_c} data slices, got {len(self.y)}")
        for i_s, s in enumerate(self.y):
            if s.shape != (self.bank.n_t, self.bank.n_c - i_s):
                raise ValueError(f"data slice {i_s} has shape {s.shape}")


@dataclass
class FistaState:
    x: np.ndarray
    z: np.ndarray
    t: float = 1.0
    k: int = 0
    step_l: float = 1.0


@dataclass
class FistaResult:
    x: np.ndarray
    trace: list
    step_l: float
    state: FistaState = field(repr=False, default=None)


@dataclass
class PowerIterationResult:
    value: float
    iterations: int
    converged: bool
    zero_operator: bool = False

    def __float__(self):
        return float(self.value)


def soft_threshold(v, theta: float):
    """Proximal map of ``theta * ||.||_1``."""
    if theta < 0:
        raise ValueError(f"threshold must be non-negative, got {theta}")
    v = np.asarray(v)
    return np.sign(v) * np.maximum(np.abs(v) - theta, 0.0)


def lipschitz_estimate(bank: KernelBank, weights=None, iters: int = 100,
                       tol: float = 1e-6, seed=0) -> PowerIterationResult:
    """Largest eigenvalue of the weighted normal operator by power iteration.

    Stops once the Rayleigh quotient changes by less than ``tol`` relative.
    """
    if weights is None:
        weights = slice_weights(bank.n_c)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(bank.roi.shape)
    x /= np.linalg.norm(x)
    lam = 0.0
    for it in range(1, iters + 1):
        ax = conv_adjoint(bank, conv_forward(bank, x), weights)
        lam_new = float(np.vdot(x, ax))
        nrm = np.linalg.norm(ax)
        if nrm == 0:
            return PowerIterationResult(0.0, it, True, zero_operator=True)
        x = ax / nrm
        if it > 1 and abs(lam_new - lam) <= tol * abs(lam_new):
            return PowerIterationResult(lam_new, it, True)
        lam = lam_new
    return PowerIterationResult(lam, iters, False)


def _data_residual(prob: LassoProblem, x):
    return [f - y for f, y in zip(conv_forward(prob.bank, x), prob.y)]


def data_gradient(prob: LassoProblem, x) -> np.ndarray:
    return conv_adjoint(prob.bank, _data_residual(prob, x), prob.weights)


def lasso_objective(prob: LassoProblem, x) -> float:
    res = _data_residual(prob, x)
    fit = 0.5 * sum(w * float(np.sum(r * r)) for w, r in zip(prob.weights, res))
    return float(fit + prob.lam * np.sum(np.abs(x)))


def lambda_max(bank: KernelBank, y, weights=None) -> float:
    """``||A^T y||_inf``; any ``lam`` at or above it makes ``x = 0`` optimal."""
    return float(np.max(np.abs(conv_adjoint(bank, y, weights))))


def next_momentum(t: float) -> float:
    return (1 + math.sqrt(1 + 4 * t * t)) / 2


def fista_step(prob: LassoProblem, st: FistaState) -> FistaState:
    u = st.z - data_gradient(prob, st.z) / st.step_l
    x = soft_threshold(u, prob.lam / st.step_l)
    t_next = next_momentum(st.t)
    z = x + ((st.t - 1) / t_next) * (x - st.x)
    return FistaState(x=x, z=z, t=t_next, k=st.k + 1, step_l=st.step_l)


def bc_fista(prob: LassoProblem, x0=None, n_iter: int = 100, step_l: float | None = None,
             safety: float = 1.05, trace: bool = True, **power_kw) -> FistaResult:
    """Run ``n_iter`` FISTA iterations.

    If ``step_l`` is not given it is estimated by power iteration and
    inflated by ``safety``. The trace holds the objective at ``x0`` followed
    by one value per iteration.
    """
    if n_iter < 1:
        raise ValueError("n_iter must be at least 1")
    if step_l is None:
        est = lipschitz_estimate(prob.bank, prob.weights, **power_kw)
        if est.zero_operator:
            raise NumericalError("forward operator is zero; no step size")
        step_l = safety * est.value
    if not step_l > 0:
        raise ValueError(f"step_l must be positive, got {step_l}")
    if x0 is None:
        x0 = np.zeros(prob.bank.roi.shape)
    x0 = np.array(x0, dtype=float).reshape(prob.bank.roi.shape, order="F")
    st = FistaState(x=x0, z=x0.copy(), t=1.0, k=0, step_l=float(step_l))
    values = [lasso_objective(prob, x0)] if trace else []
    for _ in range(n_iter):
        st = fista_step(prob, st)
        if not np.all(np.isfinite(st.x)):
            raise NumericalError(f"non-finite iterate at iteration {st.k}")
        if trace:
            values.append(lasso_objective(prob, st.x))
    return FistaResult(x=st.x, trace=values, step_l=float(step_l), state=st)


def ista(prob: LassoProblem, step_l: float, n_iter: int, x0=None) -> list:
    """Plain proximal gradient; returns all iterates including ``x0``."""
    x = np.zeros(prob.bank.roi.shape) if x0 is None else np.array(x0, dtype=float)
    out = [x]
    for _ in range(n_iter):
        x = soft_threshold(x - data_gradient(prob, x) / step_l, prob.lam / step_l)
        out.append(x)
    return out
