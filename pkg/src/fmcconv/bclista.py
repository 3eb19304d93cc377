"""BC-LISTA: unrolled ISTA with learnable transpose kernels.

Layer ``k`` computes::

    r_s     = y_s - F_s x_k                         (fixed forward bank F)
    b       = sum_s agg_w[s] * G_s^T r_s            (learnable bank G)
    x_{k+1} = soft_threshold(x_k + step * b, theta)

Gradients are derived by hand (no autodiff) and parameters are updated
with Adam, one sample at a time.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from .conv_model import (KernelBank, assemble_volume, conv_adjoint, conv_forward,
                         extract_slices, slice_weights, strided_conv,
                         strided_conv_kernel_grad, strided_conv_transpose)
from .scene import RoiGrid, ScattererList, unvectorize, vectorize
from .solver import NumericalError, soft_threshold

__all__ = [
    "LayerParams",
    "NetParams",
    "TrainConfig",
    "AdamState",
    "init_from_model",
    "lista_layer",
    "lista_forward",
    "loss_mse",
    "backward",
    "named_parameters",
    "set_parameter",
    "adam_step",
    "random_map",
    "make_dataset",
    "evaluate",
    "train",
]

log = logging.getLogger(__name__)

GROUPS = ("theta", "step", "g_kernels", "agg_w", "forward")
MIN_STEP = 1e-30


@dataclass
class LayerParams:
    theta: float
    step: float
    g_kernels: list
    agg_w: np.ndarray

    @property
    def lam(self) -> float:
        return self.theta / self.step


@dataclass
class NetParams:
    forward_bank: KernelBank
    layers: list
    trainable: dict = field(default_factory=lambda: {
        "theta": True, "step": True, "g_kernels": True, "agg_w": True, "forward": False})

    def __post_init__(self):
        if not self.layers:
            raise ValueError("network needs at least one layer")
        shapes = [k.shape for k in self.forward_bank.kernels]
        for i, layer in enumerate(self.layers):
            if [k.shape for k in layer.g_kernels] != shapes:
                raise ValueError(f"layer {i}: transpose kernels do not match the forward bank")
            if np.shape(layer.agg_w) != (self.forward_bank.n_c,):
                raise ValueError(f"layer {i}: need {self.forward_bank.n_c} aggregation weights")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def copy(self) -> "NetParams":
        return copy.deepcopy(self)


@dataclass
class TrainConfig:
    """Synthetic training recipe. Defaults: 20 fresh maps per epoch, 50
    epochs, Adam with learning rate 1e-4 on the raw parameters.

    With ``relative_lr`` the rate of each parameter is multiplied by its
    initial max-abs value, i.e. steps are taken in relative units. That
    mode is much slower to move the layer step sizes and is off by default.
    """

    epochs: int = 50
    batch_per_epoch: int = 20
    lr: float = 1e-4
    seed: int = 0
    k_min: int = 1
    k_max: int = 3
    a_min: float = 0.5
    a_max: float = 1.0
    noise_std: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    relative_lr: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.batch_per_epoch < 1:
            raise ValueError("epochs must be >= 0 and batch_per_epoch >= 1")
        if not self.lr >= 0:
            raise ValueError("lr must be non-negative")
        if not 1 <= self.k_min <= self.k_max:
            raise ValueError("need 1 <= k_min <= k_max")
        if self.a_min > self.a_max:
            raise ValueError("need a_min <= a_max")


def init_from_model(bank: KernelBank, lambda0: float, L0: float, n_layers: int) -> NetParams:
    """Network whose forward pass is exactly ``n_layers`` ISTA iterations
    with regularization ``lambda0`` and step ``1 / L0``."""
    if not L0 > 0:
        raise ValueError("L0 must be positive")
    if n_layers < 1:
        raise ValueError("need at least one layer")
    w = slice_weights(bank.n_c)
    layers = [LayerParams(theta=lambda0 / L0, step=1.0 / L0,
                          g_kernels=[k.copy() for k in bank.kernels], agg_w=w.copy())
              for _ in range(n_layers)]
    return NetParams(forward_bank=bank, layers=layers)


def _layer_terms(x, y, layer: LayerParams, fwd: KernelBank):
    roi = fwd.roi
    r = [ys - fs for ys, fs in zip(y, conv_forward(fwd, x))]
    u = [strided_conv_transpose(g, rs, roi.n_z, roi.n_pixels)
         for g, rs in zip(layer.g_kernels, r)]
    b = unvectorize(sum(a * us for a, us in zip(layer.agg_w, u)), roi)
    v = x + layer.step * b
    return r, u, b, v


def lista_layer(x, y, layer: LayerParams, forward_bank: KernelBank) -> np.ndarray:
    return soft_threshold(_layer_terms(x, y, layer, forward_bank)[3], layer.theta)


def lista_forward(net: NetParams, y, x0=None, return_cache: bool = False):
    x = np.zeros(net.forward_bank.roi.shape) if x0 is None else np.asarray(x0)
    cache = []
    for layer in net.layers:
        r, u, b, v = _layer_terms(x, y, layer, net.forward_bank)
        if return_cache:
            cache.append((x, r, u, b, v))
        x = soft_threshold(v, layer.theta)
    return (x, cache) if return_cache else x


def loss_mse(x_hat, x_true) -> float:
    x_hat, x_true = np.asarray(x_hat), np.asarray(x_true)
    if x_hat.shape != x_true.shape:
        raise ValueError(f"shape mismatch {x_hat.shape} vs {x_true.shape}")
    return float(np.mean((x_hat - x_true) ** 2))


def backward(net: NetParams, y, x_true):
    """Loss and its gradient for every trainable parameter.

    Returns ``(loss, grads)`` with ``grads`` keyed like
    :func:`named_parameters`. The shrinkage derivative is 1 where
    ``|v| > theta`` and 0 otherwise, ties included.
    """
    fwd = net.forward_bank
    n_z = fwd.roi.n_z
    x_hat, cache = lista_forward(net, y, return_cache=True)
    loss = loss_mse(x_hat, x_true)
    gbar = 2.0 * (x_hat - x_true) / x_hat.size
    tr = net.trainable
    grads = {}
    fwd_grad = [np.zeros_like(k) for k in fwd.kernels] if tr.get("forward") else None
    ones = np.ones(fwd.n_c)

    for k in range(net.n_layers - 1, -1, -1):
        layer = net.layers[k]
        x_in, r, u, b, v = cache[k]
        active = np.abs(v) > layer.theta
        vbar = np.where(active, gbar, 0.0)
        if tr.get("theta"):
            grads[f"layer{k}.theta"] = np.array(-np.sum(np.sign(v) * vbar))
        if tr.get("step"):
            grads[f"layer{k}.step"] = np.array(np.sum(vbar * b))
        bbar = layer.step * vbar
        bvec = vectorize(bbar)
        if tr.get("agg_w"):
            grads[f"layer{k}.agg_w"] = np.array([np.dot(bvec, us) for us in u])
        rbar = []
        for s, (g, rs) in enumerate(zip(layer.g_kernels, r)):
            a = layer.agg_w[s]
            if tr.get("g_kernels"):
                grads[f"layer{k}.g{s}"] = a * strided_conv_kernel_grad(rs, bvec, n_z, g.shape[1])
            rbar.append(a * strided_conv(g, bvec, n_z, rs.shape[1]))
        # r = y - F x
        gbar = vbar - conv_adjoint(fwd, rbar, ones)
        if fwd_grad is not None:
            xvec = vectorize(x_in)
            for s, kern in enumerate(fwd.kernels):
                fwd_grad[s] -= strided_conv_kernel_grad(rbar[s], xvec, n_z, kern.shape[1])
        if not np.all(np.isfinite(gbar)):
            raise NumericalError(f"non-finite gradient in layer {k}")
    if fwd_grad is not None:
        for s, gk in enumerate(fwd_grad):
            grads[f"forward.{s}"] = gk
    return loss, grads


def named_parameters(net: NetParams, trainable_only: bool = True) -> dict:
    """Flat ``name -> array`` view of the parameters (copies for scalars)."""
    tr = net.trainable
    out = {}
    for k, layer in enumerate(net.layers):
        if tr.get("theta") or not trainable_only:
            out[f"layer{k}.theta"] = np.array(layer.theta)
        if tr.get("step") or not trainable_only:
            out[f"layer{k}.step"] = np.array(layer.step)
        if tr.get("agg_w") or not trainable_only:
            out[f"layer{k}.agg_w"] = layer.agg_w
        if tr.get("g_kernels") or not trainable_only:
            for s, g in enumerate(layer.g_kernels):
                out[f"layer{k}.g{s}"] = g
    if tr.get("forward") or not trainable_only:
        for s, kern in enumerate(net.forward_bank.kernels):
            out[f"forward.{s}"] = kern
    return out


def set_parameter(net: NetParams, name: str, value) -> None:
    if name.startswith("forward."):
        net.forward_bank.kernels[int(name.split(".")[1])] = np.asarray(value, dtype=float)
        return
    head, attr = name.split(".")
    layer = net.layers[int(head[len("layer"):])]
    if attr == "theta":
        layer.theta = float(value)
    elif attr == "step":
        layer.step = float(value)
    elif attr == "agg_w":
        layer.agg_w = np.asarray(value, dtype=float)
    elif attr.startswith("g"):
        layer.g_kernels[int(attr[1:])] = np.asarray(value, dtype=float)
    else:
        raise KeyError(name)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    lr_scale: dict = field(default_factory=dict)


def parameter_scales(net: NetParams) -> dict:
    """Per-parameter magnitude used to express Adam steps in relative units."""
    out = {}
    for name, p in named_parameters(net).items():
        s = float(np.max(np.abs(p))) if np.size(p) else 0.0
        out[name] = s if s > 0 else 1.0
    return out


def adam_step(net: NetParams, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> NetParams:
    """One bias-corrected Adam update, in place.

    ``state.lr_scale`` optionally multiplies the learning rate per
    parameter. ``theta`` is clamped at 0 and ``step`` kept positive.
    """
    state.t += 1
    bc1 = 1 - beta1**state.t
    bc2 = 1 - beta2**state.t
    params = named_parameters(net)
    for name, g in grads.items():
        g = np.asarray(g, dtype=float)
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        # in place: the kernel banks hold millions of entries
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        g = g * g
        g *= 1 - beta2
        v += g
        rate = lr * state.lr_scale.get(name, 1.0)
        p = params[name]
        if p.ndim:
            # p is the live array held by the network
            den = np.sqrt(v / bc2)
            den += eps
            upd = np.divide(m, den, out=den)
            upd *= rate / bc1
            p -= upd
            continue
        new = p - rate * (m / bc1) / (np.sqrt(v / bc2) + eps)
        if name.endswith(".theta"):
            new = np.maximum(new, 0.0)
        elif name.endswith(".step"):
            new = np.maximum(new, MIN_STEP)
        set_parameter(net, name, new)
    return net


def random_map(rng: np.random.Generator, roi: RoiGrid, cfg: TrainConfig):
    """Sparse map with ``k ~ U{k_min..k_max}`` scatterers at distinct pixels
    and amplitudes ``U[a_min, a_max]``."""
    if cfg.k_max > roi.n_pixels:
        raise ValueError(f"k_max={cfg.k_max} exceeds the {roi.n_pixels} pixels")
    k = int(rng.integers(cfg.k_min, cfg.k_max + 1))
    idx = rng.choice(roi.n_pixels, size=k, replace=False)
    amp = rng.uniform(cfg.a_min, cfg.a_max, size=k)
    vec = np.zeros(roi.n_pixels)
    vec[idx] = amp
    x = unvectorize(vec, roi)
    return x, ScattererList.from_map(x)


def _measure(bank: KernelBank, x, noise_std: float, rng: np.random.Generator):
    y = conv_forward(bank, x)
    if noise_std > 0:
        vol = assemble_volume(y)
        vol = vol + noise_std * rng.standard_normal(vol.shape)
        y = extract_slices(vol)
    return y


def make_dataset(bank: KernelBank, cfg: TrainConfig, n: int, rng: np.random.Generator):
    """``n`` pairs ``(x, y)`` drawn with the training recipe."""
    out = []
    for _ in range(n):
        x, _ = random_map(rng, bank.roi, cfg)
        out.append((x, _measure(bank, x, cfg.noise_std, rng)))
    return out


def evaluate(net: NetParams, data) -> float:
    """Mean MSE of the network over ``(x, y)`` pairs."""
    return float(np.mean([loss_mse(lista_forward(net, y), x) for x, y in data]))


def train(net: NetParams, cfg: TrainConfig, progress=None):
    """Streaming Adam training on freshly generated maps every epoch.

    Returns ``(net, losses)`` where ``losses[e]`` is the mean training loss
    of epoch ``e``. ``net`` is updated in place.
    """
    rng = np.random.default_rng(cfg.seed)
    bank = net.forward_bank
    state = AdamState()
    if cfg.relative_lr:
        state.lr_scale = parameter_scales(net)
    losses = []
    for epoch in range(cfg.epochs):
        batch = make_dataset(bank, cfg, cfg.batch_per_epoch, rng)
        total = 0.0
        for x, y in batch:
            loss, grads = backward(net, y, x)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss in epoch {epoch}")
            total += loss
            if cfg.lr > 0:
                adam_step(net, grads, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        losses.append(total / len(batch))
        log.debug("epoch %d loss %.6g", epoch, losses[-1])
        if progress is not None:
            progress(epoch, losses[-1])
    return net, losses
