import numpy as np
import pytest

from fmcconv.conv_model import build_kernel_bank
from fmcconv.dense_model import build_dense
from fmcconv.scene import AcquisitionConfig, RoiGrid, square_roi

# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def make_setup(n_c, n_x=None, n_z=None, **acq_kw):
    acq = AcquisitionConfig(n_c=n_c, **acq_kw)
    if n_x is None and n_z is None:
        roi = square_roi(acq)
    else:
        n_x = n_x or n_c
        n_z = n_z or n_c
        roi = RoiGrid(n_x=n_x, n_z=n_z, d_x=acq.d_c, d_z=acq.d_c, d_s=n_z * acq.d_c)
    return acq, roi


@pytest.fixture(scope="session")
def small():
    """n_c = 4 on a 4x4 grid with both model representations."""
    acq, roi = make_setup(4)
    return acq, roi, build_kernel_bank(acq, roi), build_dense(acq, roi)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def _loss_extended(net, y, x_true):
    """Loss in extended precision plus the active masks of every layer."""
    from fmcconv.bclista import lista_forward

    yl = [s.astype(np.longdouble) for s in y]
    x0 = np.zeros(net.forward_bank.roi.shape, dtype=np.longdouble)
    xh, cache = lista_forward(net, yl, x0=x0, return_cache=True)
    masks = [np.abs(c[4]) > layer.theta for c, layer in zip(cache, net.layers)]
    return np.mean((xh - x_true.astype(np.longdouble)) ** 2), masks


def fd_check(net, y, x_true, rng, per_param=20, h=1e-6, floor=1e-6):
    """Central-difference check of ``backward`` on sampled coordinates.

    Differences are taken in extended precision so the oracle is not
    limited by float64 cancellation. The relative error is floored at
    ``floor`` times the largest gradient entry of the same parameter, since
    components far below that are pure float64 roundoff in the analytic
    result. Coordinates whose +h/-h evaluations straddle a shrinkage kink
    are skipped.

    Returns ``(worst_rel, n_checked, n_kink, failures)``.
    """
    from fmcconv.bclista import backward, named_parameters, set_parameter

    _, grads = backward(net, y, x_true)
    worst, n_checked, n_kink, failures = 0.0, 0, 0, []
    for name, p in named_parameters(net).items():
        base = np.array(p, dtype=float)
        an_all = np.asarray(grads[name], dtype=float).ravel()
        scale = floor * max(np.abs(an_all).max(), 1e-300)
        size = base.size
        idxs = range(size) if size <= per_param else rng.choice(size, per_param, replace=False)
        for i in idxs:
            vals = []
            for sgn in (1, -1):
                q = base.ravel().copy()
                q[i] += sgn * h
                set_parameter(net, name, q.reshape(base.shape))
                vals.append(_loss_extended(net, y, x_true))
            set_parameter(net, name, base)
            (lp, mp), (lm, mm) = vals
            if any((a != b).any() for a, b in zip(mp, mm)):
                n_kink += 1
                continue
            fd = float((lp - lm) / (2 * h))
            an = an_all[i]
            rel = abs(fd - an) / max(abs(fd), abs(an), scale)
            n_checked += 1
            worst = max(worst, rel)
            if rel > 1e-4:
                failures.append((name, int(i), fd, an, rel))
    return worst, n_checked, n_kink, failures


def perturbed_net(bank, rng, n_layers=2, lam_frac=0.05, y=None):
    """Init net nudged off the ISTA point so every gradient path is exercised."""
    from fmcconv.bclista import init_from_model
    from fmcconv.solver import lambda_max, lipschitz_estimate

    L = lipschitz_estimate(bank).value
    lam = lam_frac * lambda_max(bank, y) if y is not None else 0.0
    net = init_from_model(bank, lam, L, n_layers)
    for layer in net.layers:
        layer.agg_w = layer.agg_w * rng.uniform(0.8, 1.2, bank.n_c)
        layer.g_kernels = [g * (1 + 0.1 * rng.standard_normal(g.shape)) for g in layer.g_kernels]
        layer.step *= 3
    return net
