import dataclasses
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fmcconv import cli
from fmcconv.conv_model import build_kernel_bank, storage_bytes
from fmcconv.dense_model import build_dense, dense_forward
from fmcconv.io import (ConfigError, FormatError, RunConfig, config_hash, decode_text,
                        encode_text, format_config, parse_config, read_csv, read_pgm,
                        read_tensors, write_csv, write_pgm, write_tensors)
from fmcconv.scene import ScattererList
from fmcconv.solver import LassoProblem, ista


# ---- tensor container


def test_tensor_roundtrip_bitwise(tmp_path, rng):
    recs = {
        "a": rng.standard_normal((3, 4, 5)),
        "b": rng.standard_normal(7).astype(np.float32),
        "scalar": np.array(2.5),
        "text": encode_text("n_c = 4\nnaïve"),
        "empty": np.zeros((0, 3)),
        "fortran": np.asfortranarray(rng.standard_normal((2, 6))),
    }
    p = tmp_path / "t.btfm"
    write_tensors(p, recs)
    back = read_tensors(p)
    assert list(back) == list(recs)
    for k, v in recs.items():
        assert back[k].dtype == v.dtype and back[k].shape == v.shape
        np.testing.assert_array_equal(back[k], v)
    assert decode_text(back["text"]) == "n_c = 4\nnaïve"


def test_tensor_layout_is_little_endian_column_major(tmp_path):
    p = tmp_path / "t.btfm"
    write_tensors(p, {"m": np.array([[1.0, 2.0], [3.0, 4.0]])})
    buf = p.read_bytes()
    assert buf[:4] == b"BTFM"
    assert struct.unpack_from("<II", buf, 4) == (1, 1)
    assert struct.unpack_from("<I", buf, 12) == (1,)
    assert buf[16:17] == b"m"
    assert struct.unpack_from("<BB2Q", buf, 17) == (0, 2, 2, 2)
    assert struct.unpack_from("<4d", buf, 35) == (1.0, 3.0, 2.0, 4.0)


def test_tensor_errors(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(b"NOPE")
    with pytest.raises(FormatError):
        read_tensors(p)
    write_tensors(p, {"x": np.arange(10.0)})
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(FormatError):
        read_tensors(p)
    buf = bytearray((tmp_path / "bad").read_bytes())
    buf[4] = 9
    p.write_bytes(bytes(buf))
    with pytest.raises(FormatError):
        read_tensors(p)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=0, max_size=3), st.booleans(), st.integers(0, 99))
def test_tensor_roundtrip_property(tmp_path_factory, dims, single, seed):
    a = np.random.default_rng(seed).standard_normal(dims)
    if single:
        a = a.astype(np.float32)
    p = tmp_path_factory.mktemp("h") / "t.btfm"
    write_tensors(p, {"a": a})
    b = read_tensors(p)["a"]
    assert b.dtype == a.dtype and b.shape == a.shape
    assert b.tobytes() == a.tobytes()


# ---- config


def test_config_roundtrip_and_parse():
    cfg, given_keys = parse_config("""
        # comment
        n_c = 4
        lam = 0.25   # trailing comment
        bench_sizes = 2, 4
        write_volume = true
        precision = f32
    """)
    assert given_keys == {"n_c", "lam", "bench_sizes", "write_volume", "precision"}
    assert cfg.n_c == 4 and cfg.lam == 0.25 and cfg.bench_sizes == (2, 4)
    assert cfg.write_volume and cfg.dtype == np.float32
    back, _ = parse_config(format_config(cfg))
    assert back == cfg
    assert config_hash(back) == config_hash(cfg)
    assert config_hash(dataclasses.replace(cfg, seed=1)) != config_hash(cfg)


@settings(max_examples=40)
@given(st.integers(1, 64), st.floats(1e-6, 1e3, allow_nan=False), st.one_of(st.none(),
       st.floats(0, 1e6, allow_nan=False)), st.booleans(),
       st.lists(st.integers(1, 128), min_size=1, max_size=5))
def test_config_roundtrip_property(n_c, c0, lam, rel, sizes):
    cfg = RunConfig(n_c=n_c, c0=c0, lam=lam, relative_lr=rel, bench_sizes=tuple(sizes))
    assert parse_config(format_config(cfg))[0] == cfg


@pytest.mark.parametrize("text", ["nonsense = 1", "n_c = 4\nn_c = 5", "n_c = four",
                                  "no equals sign", "precision = f16", "n_c = ",
                                  "write_volume = maybe"])
def test_config_rejects(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_config_geometry_defaults():
    cfg = RunConfig(n_c=6)
    roi = cfg.roi()
    assert (roi.n_x, roi.n_z, roi.d_x, roi.d_z) == (6, 6, cfg.d_c, cfg.d_c)
    assert roi.d_s == pytest.approx(6 * cfg.d_c)
    assert cfg.acquisition().n_c == 6


# ---- csv and pgm


def test_csv_crlf_roundtrip(tmp_path):
    p = tmp_path / "t.csv"
    write_csv(p, ["a", "b"], [(1, "x,y"), (2, 'q"uote')])
    assert p.read_bytes().startswith(b"a,b\r\n")
    header, rows = read_csv(p)
    assert header == ["a", "b"] and rows == [["1", "x,y"], ["2", 'q"uote']]


def test_pgm_cases(tmp_path):
    p = tmp_path / "i.pgm"
    write_pgm(p, np.zeros((3, 5)))
    img = read_pgm(p)
    assert img.shape == (3, 5) and not img.any()
    x = np.zeros((3, 5))
    x[1, 4] = 0.2
    write_pgm(p, x, comment="hello\nworld")
    img = read_pgm(p)
    assert img[1, 4] == 255 and np.count_nonzero(img) == 1
    assert p.read_bytes().startswith(b"P5\n# hello\n# world\n5 3\n255\n")
    y = np.random.default_rng(0).standard_normal((4, 4))
    np.testing.assert_array_equal(write_pgm(p, y), write_pgm(p, -37.5 * y))
    with pytest.raises(ValueError):
        write_pgm(p, np.zeros(4))


# ---- command line


def _write_cfg(path, **kw):
    kw.setdefault("n_c", 4)
    path.write_text("".join(f"{k} = {v}\n" for k, v in kw.items()))
    return path


def test_cli_simulate_matches_dense_and_is_reproducible(tmp_path):
    cfg = _write_cfg(tmp_path / "c.cfg", write_volume="true", seed=3)
    out = tmp_path / "d.btfm"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    rec = read_tensors(out)
    x = rec["x_true"]
    assert 1 <= np.count_nonzero(x) <= 3
    rc = RunConfig(n_c=4)
    dense = build_dense(rc.acquisition(), rc.roi())
    np.testing.assert_allclose(rec["volume"].ravel(order="F"), dense_forward(dense, x),
                               rtol=0, atol=1e-12)
    assert decode_text(rec["meta.config_hash"]) == config_hash(parse_config(cfg.read_text())[0])
    assert rec["meta.seed"][0] == 3
    first = out.read_bytes()
    cli.main(["simulate", "--config", str(cfg), "--out", str(out)])
    assert out.read_bytes() == first
    cli.main(["simulate", "--config", str(cfg), "--out", str(out), "--seed", "4"])
    assert out.read_bytes() != first
    header, rows = read_csv(str(out) + ".scatterers.csv")
    assert header == ["i_x", "i_z", "a"] and len(rows) == np.count_nonzero(x)


def test_cli_simulate_from_empty_scatterer_file(tmp_path):
    scat = tmp_path / "s.csv"
    write_csv(scat, ["i_x", "i_z", "a"], [])
    cfg = _write_cfg(tmp_path / "c.cfg", scatterers_file=scat)
    out = tmp_path / "d.btfm"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    rec = read_tensors(out)
    assert all(not rec[f"slice.{i}"].any() for i in range(4))
    write_csv(scat, ["i_x", "i_z", "a"], [(9, 0, 1.0)])
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out)]) == 1


def test_cli_fista_and_render(tmp_path):
    scat = tmp_path / "s.csv"
    write_csv(scat, ["i_x", "i_z", "a"], [(1, 2, 1.0)])
    cfg = _write_cfg(tmp_path / "c.cfg", scatterers_file=scat, n_iter=60, lambda_frac=0.001)
    data, xhat, img = tmp_path / "d.btfm", tmp_path / "x.btfm", tmp_path / "x.pgm"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(data)]) == 0
    assert cli.main(["fista", "--config", str(cfg), "--in", str(data), "--out", str(xhat)]) == 0
    x = read_tensors(xhat)["x_hat"]
    assert np.unravel_index(np.argmax(np.abs(x)), x.shape) == (2, 1)
    header, rows = read_csv(str(xhat) + ".trace.csv")
    assert header[:2] == ["iteration", "objective"] and len(rows) == 61
    assert float(rows[-1][1]) <= float(rows[0][1])
    assert cli.main(["render", "--in", str(xhat), "--out", str(img)]) == 0
    pix = read_pgm(img)
    assert pix.shape == (4, 4) and pix[2, 1] == 255
    assert b"config_hash=" in img.read_bytes()[:200]


def test_cli_build_kernels(tmp_path):
    cfg = _write_cfg(tmp_path / "c.cfg", precision="f32")
    out = tmp_path / "k.btfm"
    assert cli.main(["build-kernels", "--config", str(cfg), "--out", str(out)]) == 0
    rec = read_tensors(out)
    rc = RunConfig(n_c=4)
    bank = build_kernel_bank(rc.acquisition(), rc.roi())
    for i, k in enumerate(bank.kernels):
        assert rec[f"kernel.{i}"].dtype == np.float32
        np.testing.assert_allclose(rec[f"kernel.{i}"], k, rtol=1e-6, atol=1e-7)
    assert sum(v.size for k, v in rec.items() if k.startswith("kernel")) * 4 == \
        storage_bytes("conv", rc.acquisition(), rc.roi())


def test_cli_lista_train_and_infer(tmp_path):
    cfg = _write_cfg(tmp_path / "c.cfg", epochs=0, n_layers=3)
    net, data, xhat = tmp_path / "n.btfm", tmp_path / "d.btfm", tmp_path / "x.btfm"
    assert cli.main(["lista-train", "--config", str(cfg), "--out", str(net)]) == 0
    _, rows = read_csv(str(net) + ".loss.csv")
    assert rows == []
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(data)]) == 0
    assert cli.main(["lista-infer", "--config", str(cfg), "--net", str(net), "--in", str(data),
                     "--out", str(xhat)]) == 0
    # untrained network is plain ISTA
    rec = read_tensors(net)
    step, theta = rec["layer0.step"][0], rec["layer0.theta"][0]
    rc = RunConfig(n_c=4)
    bank = build_kernel_bank(rc.acquisition(), rc.roi())
    d = read_tensors(data)
    y = [d[f"slice.{i}"] for i in range(4)]
    ref = ista(LassoProblem(bank, y, theta / step), 1 / step, 3)[-1]
    got = read_tensors(xhat)["x_hat"]
    assert np.max(np.abs(got - ref)) <= 1e-10 * np.max(np.abs(ref))

    cfg2 = _write_cfg(tmp_path / "c2.cfg", epochs=2, batch_per_epoch=2, n_layers=2)
    assert cli.main(["lista-train", "--config", str(cfg2), "--out", str(net)]) == 0
    header, rows = read_csv(str(net) + ".loss.csv")
    assert header[:2] == ["epoch", "loss"] and len(rows) == 2
    first = net.read_bytes()
    assert cli.main(["lista-train", "--config", str(cfg2), "--out", str(net)]) == 0
    assert net.read_bytes() == first

    # geometry mismatch on load
    cfg3 = _write_cfg(tmp_path / "c3.cfg", n_c=3)
    assert cli.main(["lista-infer", "--config", str(cfg3), "--net", str(net), "--in", str(data),
                     "--out", str(xhat)]) == 1


def test_cli_bench(tmp_path):
    cfg = _write_cfg(tmp_path / "c.cfg", bench_sizes="1,2,3", bench_reps=3, bench_iters=2)
    out = tmp_path / "b.csv"
    assert cli.main(["bench", "--config", str(cfg), "--out", str(out)]) == 0
    header, rows = read_csv(out)
    assert header == cli.BENCH_HEADER and len(rows) == 3
    col = {h: i for i, h in enumerate(header)}
    for r in rows:
        assert float(r[col["fista_min_s"]]) <= float(r[col["fista_avg_s"]]) \
            <= float(r[col["fista_max_s"]])
        assert float(r[col["lista_min_s"]]) <= float(r[col["lista_avg_s"]]) \
            <= float(r[col["lista_max_s"]])
        rc = RunConfig(n_c=int(r[0]))
        assert int(r[col["dense_bytes"]]) == storage_bytes("dense", rc.acquisition(), rc.roi())
    ratios = [float(r[col["ratio"]]) for r in rows]
    assert ratios == sorted(ratios)
    # over budget: formula-only row
    cfg = _write_cfg(tmp_path / "c.cfg", bench_sizes="64", memory_budget=1000)
    assert cli.main(["bench", "--config", str(cfg), "--out", str(out)]) == 0
    _, rows = read_csv(out)
    assert rows[0][col["fista_avg_s"]] == "" and int(rows[0][col["conv_bytes"]]) > 0


def test_cli_exit_codes(tmp_path):
    cfg = _write_cfg(tmp_path / "c.cfg")
    assert cli.main(["fista", "--config", str(cfg), "--in", str(tmp_path / "missing"),
                     "--out", str(tmp_path / "o")]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("n_c = 4\nfrobnicate = 1\n")
    assert cli.main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    nokey = tmp_path / "nokey.cfg"
    nokey.write_text("seed = 1\n")
    assert cli.main(["simulate", "--config", str(nokey), "--out", str(tmp_path / "o")]) == 1
    assert cli.main(["simulate"]) == 1
    junk = tmp_path / "junk.btfm"
    junk.write_bytes(b"garbage")
    assert cli.main(["fista", "--config", str(cfg), "--in", str(junk),
                     "--out", str(tmp_path / "o")]) == 1
    # non-finite measurements
    rc = RunConfig(n_c=4)
    bank = build_kernel_bank(rc.acquisition(), rc.roi())
    nan = tmp_path / "nan.btfm"
    write_tensors(nan, {f"slice.{i}": np.full((bank.n_t, 4 - i), np.nan) for i in range(4)})
    lam_cfg = _write_cfg(tmp_path / "l.cfg", lam=0.1)
    assert cli.main(["fista", "--config", str(lam_cfg), "--in", str(nan),
                     "--out", str(tmp_path / "o")]) == 3
    assert cli.main(["render", "--in", str(cfg), "--out", str(tmp_path / "o.pgm")]) == 1


def test_cli_fista_accepts_volume(tmp_path):
    scat = ScattererList([(0, 1, 0.8)])
    cfg = _write_cfg(tmp_path / "c.cfg", write_volume="true", n_iter=5)
    rc = parse_config(cfg.read_text())[0]
    data = tmp_path / "d.btfm"
    rec = cli.cmd_simulate(dataclasses.replace(rc, scatterers_file=None), data)
    only_vol = tmp_path / "v.btfm"
    write_tensors(only_vol, {"volume": rec["volume"]})
    a = cli.cmd_fista(rc, data, tmp_path / "a.btfm").x
    b = cli.cmd_fista(rc, only_vol, tmp_path / "b.btfm").x
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
    assert scat.to_map(rc.roi()).shape == a.shape
