"""
Command line walkthrough
========================

Run every ``fmcconv`` subcommand on a small configuration inside a
temporary directory and show what each one writes.
"""

import subprocess
import sys
import tempfile
from pathlib import Path

from fmcconv.io import read_csv, read_tensors


def fmcconv(*args):
    cmd = [sys.executable, "-m", "fmcconv.cli", *map(str, args)]
    print("$ fmcconv", " ".join(map(str, args)))
    subprocess.run(cmd, check=True)


with tempfile.TemporaryDirectory() as tmp:
    d = Path(tmp)
    cfg = d / "run.cfg"
    cfg.write_text("""\
# small array, noisy data
n_c = 8
noise_std = 0.01
seed = 4
n_iter = 100
lambda_frac = 0.02
epochs = 3
n_layers = 5
bench_sizes = 2, 4, 8
bench_reps = 20
""")
    fmcconv("simulate", "--config", cfg, "--out", d / "data.btfm")
    print("  records:", list(read_tensors(d / "data.btfm")))

    fmcconv("build-kernels", "--config", cfg, "--out", d / "bank.btfm")

    fmcconv("fista", "--config", cfg, "--in", d / "data.btfm", "--out", d / "fista.btfm")
    _, trace = read_csv(str(d / "fista.btfm") + ".trace.csv")
    print(f"  objective {float(trace[0][1]):.4g} -> {float(trace[-1][1]):.4g}")

    fmcconv("lista-train", "--config", cfg, "--out", d / "net.btfm")
    fmcconv("lista-infer", "--config", cfg, "--net", d / "net.btfm", "--in", d / "data.btfm",
            "--out", d / "lista.btfm")

    fmcconv("render", "--in", d / "fista.btfm", "--out", d / "fista.pgm")
    print("  image header:", (d / "fista.pgm").read_bytes()[:2])

    fmcconv("bench", "--config", cfg, "--out", d / "bench.csv")
    header, rows = read_csv(d / "bench.csv")
    for row in rows:
        print("  ", dict(zip(header[:7], row[:7])))
