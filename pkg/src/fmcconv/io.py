"""File formats: the BTFM tensor container, flat ``key = value`` run
configs, CSV tables and binary PGM images.

BTFM layout (all integers little-endian)::

    b"BTFM" | u32 version (=1) | u32 record count
    per record:
        u32 name length | UTF-8 name | u8 dtype | u8 rank | rank x u64 dims
        payload, little-endian, column-major

dtype codes: 0 = float64, 1 = float32, 2 = uint8 (used for embedded text).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import struct
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .scene import AcquisitionConfig, RoiGrid

__all__ = [
    "MAGIC",
    "FormatError",
    "ConfigError",
    "write_tensors",
    "read_tensors",
    "encode_text",
    "decode_text",
    "RunConfig",
    "parse_config",
    "format_config",
    "load_config",
    "config_hash",
    "write_csv",
    "read_csv",
    "write_pgm",
    "read_pgm",
]

MAGIC = b"BTFM"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4"), 2: np.dtype("u1")}
_CODES = {np.dtype("float64"): 0, np.dtype("float32"): 1, np.dtype("uint8"): 2}


class FormatError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def write_tensors(path, records: dict) -> None:
    """Write named arrays. Anything that is not float32/uint8 is stored as
    float64."""
    out = [MAGIC, struct.pack("<II", VERSION, len(records))]
    for name, arr in records.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            arr = arr.astype(np.float64)
        code = _CODES[arr.dtype]
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<BB", code, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.astype(_DTYPES[code]).tobytes(order="F"))
    Path(path).write_bytes(b"".join(out))


def read_tensors(path) -> dict:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise FormatError(f"{path}: not a BTFM file")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        pos = 12
        out = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            code, rank = struct.unpack_from("<BB", buf, pos)
            pos += 2
            dims = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            dt = _DTYPES[code]
            size = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
            if pos + size > len(buf):
                raise FormatError(f"{path}: record {name!r} truncated")
            flat = np.frombuffer(buf, dtype=dt, count=size // dt.itemsize, offset=pos)
            out[name] = flat.reshape(dims, order="F").astype(dt.newbyteorder("="))
            pos += size
    except (struct.error, KeyError, UnicodeDecodeError) as e:
        raise FormatError(f"{path}: corrupt BTFM file ({e})") from e
    return out


def encode_text(s: str) -> np.ndarray:
    return np.frombuffer(s.encode("utf-8"), dtype=np.uint8).copy()


def decode_text(a: np.ndarray) -> str:
    return np.asarray(a, dtype=np.uint8).tobytes().decode("utf-8")


@dataclass
class RunConfig:
    """Every tunable of the command line tools, as flat keys.

    ``n_x``/``n_z`` default to ``n_c``; ``d_z`` defaults to ``d_c``;
    ``d_s`` defaults to the ROI depth.
    """

    # acquisition
    n_c: int = 8
    d_c: float = 0.5e-3
    f_c: float = 5e6
    alpha: float = 2.5e12
    f_s: float = 20e6
    c0: float = 1480.0
    noise_std: float = 0.0
    envelope_eps: float = 1e-3
    # region of interest
    n_x: Optional[int] = None
    n_z: Optional[int] = None
    d_z: Optional[float] = None
    d_s: Optional[float] = None
    # run control
    precision: str = "f64"
    seed: int = 0
    threads: int = 1
    memory_budget: int = 2 * 1024**3
    # scene generation
    scatterers_file: Optional[str] = None
    write_volume: bool = False
    k_min: int = 1
    k_max: int = 3
    a_min: float = 0.5
    a_max: float = 1.0
    # solver
    lam: Optional[float] = None
    lambda_frac: float = 0.01
    n_iter: int = 100
    lipschitz_iters: int = 100
    lipschitz_tol: float = 1e-6
    lipschitz_safety: float = 1.05
    # BC-LISTA
    n_layers: int = 5
    epochs: int = 50
    batch_per_epoch: int = 20
    lr: float = 1e-4
    train_noise_std: float = 0.0
    relative_lr: bool = False
    # benchmark
    bench_sizes: tuple = (2, 4, 8)
    bench_reps: int = 100
    bench_iters: int = 5

    def __post_init__(self):
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")
        self.bench_sizes = tuple(int(v) for v in self.bench_sizes)

    def acquisition(self) -> AcquisitionConfig:
        return AcquisitionConfig(n_c=self.n_c, d_c=self.d_c, f_c=self.f_c, alpha=self.alpha,
                                 f_s=self.f_s, c0=self.c0, noise_std=self.noise_std,
                                 envelope_eps=self.envelope_eps)

    def roi(self) -> RoiGrid:
        n_x = self.n_c if self.n_x is None else self.n_x
        n_z = self.n_c if self.n_z is None else self.n_z
        d_z = self.d_c if self.d_z is None else self.d_z
        d_s = n_z * d_z if self.d_s is None else self.d_s
        return RoiGrid(n_x=n_x, n_z=n_z, d_x=self.d_c, d_z=d_z, d_s=d_s)

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _kind(name):
    t = str(_FIELDS[name].type)
    for k in ("bool", "int", "float", "str", "tuple"):
        if k in t:
            return k
    raise AssertionError(t)


def _parse_value(name, raw):
    kind = _kind(name)
    optional = "Optional" in str(_FIELDS[name].type)
    if raw == "":
        if optional:
            return None
        raise ConfigError(f"key {name!r} needs a value")
    try:
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "tuple":
            return tuple(int(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError as e:
        raise ConfigError(f"bad value for {name!r}: {raw!r}") from e


def _format_value(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(str(i) for i in v)
    return str(v)


def parse_config(text: str, base: RunConfig | None = None) -> tuple[RunConfig, set]:
    """Parse ``key = value`` lines. Returns the config and the set of keys
    that were given explicitly. Unknown and repeated keys are errors."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw)
    cfg = dataclasses.replace(base or RunConfig(), **values)
    return cfg, set(values)


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {_format_value(getattr(cfg, f.name))}\n" for f in fields(cfg))


def load_config(path) -> tuple[RunConfig, set]:
    return parse_config(Path(path).read_text())


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(format_config(cfg).encode()).hexdigest()[:16]


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        w.writerows(rows)


def read_csv(path) -> tuple[list, list]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_pgm(path, x: np.ndarray, comment: str = "") -> np.ndarray:
    """Binary 8-bit PGM of ``|x|`` scaled so the max-abs pixel is 255.

    Rows of ``x`` are image rows (depth), columns are image columns.
    Returns the written pixel array.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"can only render 2-D maps, got shape {x.shape}")
    peak = float(np.max(np.abs(x), initial=0.0))
    if peak > 0:
        img = np.rint(255.0 * np.abs(x) / peak).astype(np.uint8)
    else:
        img = np.zeros(x.shape, dtype=np.uint8)
    head = b"P5\n"
    for line in comment.splitlines():
        head += b"# " + line.encode("ascii", "replace") + b"\n"
    head += f"{x.shape[1]} {x.shape[0]}\n255\n".encode()
    Path(path).write_bytes(head + img.tobytes(order="C"))
    return img


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        end = pos
        while not buf[end:end + 1].isspace():
            end += 1
        tokens.append(buf[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    pos += 1
    return np.frombuffer(buf[pos:pos + w * h], dtype=np.uint8).reshape(h, w)
