"""Command line front end.

    fmcconv simulate      --config C --out data.btfm
    fmcconv build-kernels --config C --out bank.btfm
    fmcconv fista         --config C --in data.btfm --out xhat.btfm
    fmcconv lista-train   --config C --out net.btfm
    fmcconv lista-infer   --config C --net net.btfm --in data.btfm --out xhat.btfm
    fmcconv bench         --config C --out bench.csv
    fmcconv render        --in xhat.btfm --out image.pgm

Exit codes: 0 ok, 1 validation, 2 I/O, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import bclista as bl
from .conv_model import KernelBank, build_kernel_bank, conv_forward, extract_slices, storage_bytes
from .io import (ConfigError, FormatError, RunConfig, config_hash, decode_text, encode_text,
                 format_config, load_config, read_csv, read_tensors, write_csv, write_pgm,
                 write_tensors)
from .scene import ScattererList, square_roi, required_samples, simulate_fmc
from .solver import LassoProblem, NumericalError, bc_fista, lambda_max, lipschitz_estimate

log = logging.getLogger("fmcconv")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3
NET_FORMAT_VERSION = 1

# keys that must be written out explicitly in the config for each command
REQUIRED = {
    "simulate": ("n_c",),
    "build-kernels": ("n_c",),
    "fista": ("n_c",),
    "lista-train": ("n_c",),
    "lista-infer": ("n_c",),
    "bench": ("bench_sizes",),
}


def _threads(n):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return contextlib.nullcontext()
    return threadpool_limits(limits=max(1, int(n)))


def _provenance(cfg: RunConfig) -> dict:
    return {
        "meta.config": encode_text(format_config(cfg)),
        "meta.config_hash": encode_text(config_hash(cfg)),
        "meta.seed": np.array([float(cfg.seed)]),
    }


def _slices_from(records: dict, n_c: int):
    if "slice.0" in records:
        try:
            return [records[f"slice.{i}"].astype(float) for i in range(n_c)]
        except KeyError as e:
            raise ConfigError(f"data has fewer slices than n_c={n_c}") from e
    if "volume" in records:
        return extract_slices(records["volume"].astype(float))
    raise ConfigError("input holds neither slices nor a volume")


def _bank(cfg: RunConfig) -> KernelBank:
    return build_kernel_bank(cfg.acquisition(), cfg.roi(), dtype=cfg.dtype)


def _read_scatterers(path) -> ScattererList:
    header, rows = read_csv(path)
    if [h.strip() for h in header[:3]] != ["i_x", "i_z", "a"]:
        raise ConfigError(f"{path}: expected header i_x,i_z,a")
    return ScattererList([(int(r[0]), int(r[1]), float(r[2])) for r in rows if r])


def _train_config(cfg: RunConfig) -> bl.TrainConfig:
    return bl.TrainConfig(epochs=cfg.epochs, batch_per_epoch=cfg.batch_per_epoch, lr=cfg.lr,
                          seed=cfg.seed, k_min=cfg.k_min, k_max=cfg.k_max, a_min=cfg.a_min,
                          a_max=cfg.a_max, noise_std=cfg.train_noise_std,
                          relative_lr=cfg.relative_lr)


def _step_l(cfg: RunConfig, bank: KernelBank) -> float:
    est = lipschitz_estimate(bank, iters=cfg.lipschitz_iters, tol=cfg.lipschitz_tol,
                             seed=cfg.seed)
    if est.zero_operator:
        raise NumericalError("forward operator is zero")
    return cfg.lipschitz_safety * est.value


def reference_lambda(cfg: RunConfig, bank: KernelBank, n_probe: int = 8) -> float:
    """Regularization weight for networks: ``lambda_frac`` times the mean
    ``||A^T y||_inf`` of a few maps drawn with the training recipe."""
    if cfg.lam is not None:
        return cfg.lam
    rng = np.random.default_rng([cfg.seed, 7])
    data = bl.make_dataset(bank, _train_config(cfg), n_probe, rng)
    return cfg.lambda_frac * float(np.mean([lambda_max(bank, y) for _, y in data]))


def cmd_simulate(cfg: RunConfig, out) -> dict:
    acq, roi = cfg.acquisition(), cfg.roi()
    if cfg.scatterers_file:
        scat = _read_scatterers(cfg.scatterers_file)
        scat.validate(roi)
    else:
        rng = np.random.default_rng(cfg.seed)
        _, scat = bl.random_map(rng, roi, _train_config(cfg))
    vol = simulate_fmc(scat, acq, roi, rng_seed=cfg.seed)
    slices = extract_slices(vol)
    rec = {"x_true": scat.to_map(roi)}
    rec.update({f"slice.{i}": s.astype(cfg.dtype) for i, s in enumerate(slices)})
    if cfg.write_volume:
        rec["volume"] = vol.astype(cfg.dtype)
    rec.update(_provenance(cfg))
    write_tensors(out, rec)
    write_csv(str(out) + ".scatterers.csv", ["i_x", "i_z", "a"],
              [(i_x, i_z, repr(float(a))) for i_x, i_z, a in scat])
    return rec


def cmd_build_kernels(cfg: RunConfig, out) -> dict:
    bank = _bank(cfg)
    rec = {f"kernel.{i}": k for i, k in enumerate(bank.kernels)}
    rec.update(_provenance(cfg))
    write_tensors(out, rec)
    return rec


def cmd_fista(cfg: RunConfig, data_in, out):
    bank = _bank(cfg)
    y = [s.astype(bank.dtype) for s in _slices_from(read_tensors(data_in), bank.n_c)]
    lam = cfg.lam if cfg.lam is not None else cfg.lambda_frac * lambda_max(bank, y)
    prob = LassoProblem(bank, y, lam)
    res = bc_fista(prob, n_iter=cfg.n_iter, step_l=_step_l(cfg, bank))
    rec = {"x_hat": res.x, "lambda": np.array([lam]), "step_l": np.array([res.step_l])}
    rec.update(_provenance(cfg))
    write_tensors(out, rec)
    h = config_hash(cfg)
    write_csv(str(out) + ".trace.csv", ["iteration", "objective", "config_hash", "seed"],
              [(k, repr(float(v)), h, cfg.seed) for k, v in enumerate(res.trace)])
    return res


def net_records(net: bl.NetParams) -> dict:
    rec = {"net.version": np.array([float(NET_FORMAT_VERSION)]),
           "net.n_layers": np.array([float(net.n_layers)])}
    for name, p in bl.named_parameters(net, trainable_only=False).items():
        rec[name] = np.atleast_1d(np.asarray(p, dtype=float))
    return rec


def net_from_records(rec: dict, bank: KernelBank) -> bl.NetParams:
    if int(rec.get("net.version", [0])[0]) != NET_FORMAT_VERSION:
        raise ConfigError("network file has an unsupported version")
    n_layers = int(rec["net.n_layers"][0])
    layers = []
    try:
        for k in range(n_layers):
            layers.append(bl.LayerParams(
                theta=float(rec[f"layer{k}.theta"][0]), step=float(rec[f"layer{k}.step"][0]),
                g_kernels=[rec[f"layer{k}.g{s}"] for s in range(bank.n_c)],
                agg_w=rec[f"layer{k}.agg_w"]))
        fwd = [rec[f"forward.{s}"] for s in range(bank.n_c)]
    except KeyError as e:
        raise ConfigError(f"network file lacks record {e}") from e
    if [f.shape for f in fwd] != [k.shape for k in bank.kernels]:
        raise ConfigError("network was trained for a different geometry")
    return bl.NetParams(forward_bank=KernelBank(fwd, bank.acq, bank.roi, bank.n_t), layers=layers)


def cmd_lista_train(cfg: RunConfig, out, progress=None):
    bank = _bank(cfg).astype(np.float64)
    lam = reference_lambda(cfg, bank)
    net = bl.init_from_model(bank, lam, _step_l(cfg, bank), cfg.n_layers)
    net, losses = bl.train(net, _train_config(cfg), progress=progress)
    rec = net_records(net)
    rec.update(_provenance(cfg))
    write_tensors(out, rec)
    h = config_hash(cfg)
    write_csv(str(out) + ".loss.csv", ["epoch", "loss", "config_hash", "seed"],
              [(e, repr(float(v)), h, cfg.seed) for e, v in enumerate(losses)])
    return net, losses


def cmd_lista_infer(cfg: RunConfig, net_in, data_in, out):
    bank = _bank(cfg).astype(np.float64)
    net = net_from_records(read_tensors(net_in), bank)
    y = _slices_from(read_tensors(data_in), bank.n_c)
    x = bl.lista_forward(net, y)
    rec = {"x_hat": x}
    rec.update(_provenance(cfg))
    write_tensors(out, rec)
    return x


BENCH_HEADER = ["n_c", "n_t", "dense_bytes", "conv_bytes", "dense_gib", "conv_gib", "ratio",
                "fista_max_s", "fista_avg_s", "fista_min_s",
                "lista_max_s", "lista_avg_s", "lista_min_s", "lista_faster",
                "config_hash", "seed"]


def _timings(fn, reps):
    fn()  # warm-up, not recorded
    ts = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return max(ts), sum(ts) / len(ts), min(ts)


def cmd_bench(cfg: RunConfig, out_csv):
    """Storage of both models over the sweep, plus max/avg/min wall clock of
    BC-FISTA and an (untrained) BC-LISTA with matched iteration counts."""
    h = config_hash(cfg)
    rows = []
    for n_c in cfg.bench_sizes:
        acq = dataclasses.replace(cfg.acquisition(), n_c=n_c)
        roi = square_roi(acq)
        n_t = required_samples(acq, roi)
        dense_b = storage_bytes("dense", acq, roi)
        conv_b = storage_bytes("conv", acq, roi)
        row = [n_c, n_t, dense_b, conv_b, dense_b / 2**30, conv_b / 2**30, dense_b / conv_b]
        # the operator itself lives in memory at the working precision
        if conv_b // 4 * np.dtype(cfg.dtype).itemsize > cfg.memory_budget:
            row += [""] * 7
        else:
            bank = build_kernel_bank(acq, roi, dtype=cfg.dtype)
            rng = np.random.default_rng(cfg.seed)
            tcfg = _train_config(cfg)
            # tiny sweeps may have fewer pixels than k_max
            k_max = min(tcfg.k_max, roi.n_pixels)
            tcfg = dataclasses.replace(tcfg, k_max=k_max, k_min=min(tcfg.k_min, k_max))
            x, _ = bl.random_map(rng, roi, tcfg)
            y = conv_forward(bank, x)
            lam = cfg.lam if cfg.lam is not None else cfg.lambda_frac * lambda_max(bank, y)
            step_l = _step_l(cfg, bank)
            prob = LassoProblem(bank, y, lam)
            net = bl.init_from_model(bank, lam, step_l, cfg.bench_iters)
            f = _timings(lambda: bc_fista(prob, n_iter=cfg.bench_iters, step_l=step_l,
                                          trace=False), cfg.bench_reps)
            g = _timings(lambda: bl.lista_forward(net, y), cfg.bench_reps)
            row += [*f, *g, int(g[1] < f[1])]
        rows.append(row + [h, cfg.seed])
        log.info("bench n_c=%d done", n_c)
    write_csv(out_csv, BENCH_HEADER, rows)
    return rows


def cmd_render(tensor_in, image_out, name=None):
    rec = read_tensors(tensor_in)
    if name is None:
        name = next((k for k in ("x_hat", "x_true") if k in rec), None)
        if name is None:
            name = next((k for k, v in rec.items() if v.ndim == 2 and not k.startswith("meta.")),
                        None)
    if name is None or name not in rec:
        raise ConfigError("no 2-D map found to render")
    comment = f"record={name}"
    if "meta.config_hash" in rec:
        comment += f" config_hash={decode_text(rec['meta.config_hash'])}"
    if "meta.seed" in rec:
        comment += f" seed={int(rec['meta.seed'][0])}"
    return write_pgm(image_out, rec[name], comment)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fmcconv", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "build-kernels", "fista", "lista-train", "lista-infer", "bench",
                 "render"):
        sp = sub.add_parser(name)
        if name != "render":
            sp.add_argument("--config", required=True, type=Path)
            sp.add_argument("--seed", type=int, help="overrides the config seed")
        if name in ("fista", "lista-infer", "render"):
            sp.add_argument("--in", dest="inp", required=True, type=Path)
        if name == "lista-infer":
            sp.add_argument("--net", required=True, type=Path)
        if name == "render":
            sp.add_argument("--name", help="record to render (default x_hat or x_true)")
        sp.add_argument("--out", required=True, type=Path)
    return p


def run(args) -> None:
    if args.command == "render":
        cmd_render(args.inp, args.out, args.name)
        return
    cfg, given = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    missing = [k for k in REQUIRED[args.command] if k not in given]
    if missing:
        raise ConfigError(f"{args.command} needs config keys: {', '.join(missing)}")
    with _threads(cfg.threads):
        if args.command == "simulate":
            cmd_simulate(cfg, args.out)
        elif args.command == "build-kernels":
            cmd_build_kernels(cfg, args.out)
        elif args.command == "fista":
            cmd_fista(cfg, args.inp, args.out)
        elif args.command == "lista-train":
            cmd_lista_train(cfg, args.out,
                            progress=lambda e, l: log.info("epoch %d loss %.4g", e, l))
        elif args.command == "lista-infer":
            cmd_lista_infer(cfg, args.net, args.inp, args.out)
        elif args.command == "bench":
            cmd_bench(cfg, args.out)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        # argparse exits with 2 on bad usage; that code is reserved for I/O
        return EXIT_OK if not e.code else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        run(args)
    except (NumericalError, FloatingPointError) as e:
        log.error("numerical failure: %s", e)
        return EXIT_NUMERICAL
    except (ConfigError, FormatError, ValueError, KeyError) as e:
        log.error("invalid input: %s", e)
        return EXIT_VALIDATION
    except OSError as e:
        log.error("I/O error: %s", e)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
