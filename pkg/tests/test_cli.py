import csv
import io
import json
import struct

import pytest

from ustep import cli
from ustep.data import read_dataset


def run(*argv):
    # argparse rejects bad flags by raising SystemExit; fold that into the code
    try:
        return cli.main([str(a) for a in argv])
    except SystemExit as exc:
        return exc.code


@pytest.fixture
def ds12(tmp_path):
    path = tmp_path / "d.ustp"
    assert run("gen-data", "--out", path, "--num", 6, "--T", 4, "--Tp", 4, "--H", 12, "--W", 12, "--size", 3, "--seed", 1) == 0
    return path


@pytest.fixture
def ckpt(tmp_path, ds12):
    out = tmp_path / "ustep.ckpt"
    assert run("train", "--data", ds12, "--hidden", 4, "--depth", 1, "--epochs", 1, "--batch-size", 3, "--out", out) == 0
    return out


def test_gen_data_example(tmp_path, capsys):
    out = tmp_path / "toy.ustp"
    assert run("gen-data", "--num", 256, "--T", 4, "--Tp", 4, "--H", 16, "--W", 16, "--objects", 1, "--seed", 7, "--out", out) == 0
    assert struct.unpack_from("<5I", out.read_bytes(), 6) == (256, 8, 1, 16, 16)
    printed = capsys.readouterr().out
    assert "N=256 L=8 C=1 H=16 W=16" in printed and "seed = 7" in printed


def test_gen_data_byte_identical(tmp_path):
    a, b = tmp_path / "a.ustp", tmp_path / "b.ustp"
    flags = ("--num", 5, "--variant", "dynamic-speed", "--sigma-v", 0.5, "--seed", 3)
    assert run("gen-data", "--out", a, *flags) == 0
    assert run("gen-data", "--out", b, *flags) == 0
    assert a.read_bytes() == b.read_bytes()
    assert read_dataset(a).config.variant == "dynamic-speed"


def test_gen_data_config_file(tmp_path):
    cfg = tmp_path / "gen.cfg"
    cfg.write_text("# toy\nnum_sequences = 3\nspeed-max = 0\nspeed_min = 0\n")
    out = tmp_path / "d.ustp"
    assert run("gen-data", "--config", cfg, "--seed", 2, "--out", out) == 0
    ds = read_dataset(out)
    assert ds.shape[0] == 3 and ds.config.seed == 2


@pytest.mark.parametrize(
    "argv",
    [
        ("gen-data", "--size", 16),
        ("gen-data", "--noise", 1.5),
        ("gen-data", "--bogus", 1),
        ("gen-data", "--variant", "fashion"),
    ],
)
def test_gen_data_usage_errors(tmp_path, argv):
    assert run(*argv, "--out", tmp_path / "x.ustp") == 2


def test_missing_output_dir(tmp_path):
    assert run("gen-data", "--out", tmp_path / "nope" / "x.ustp") == 4


def test_train_guideline_echo(tmp_path, capsys):
    data = tmp_path / "long.ustp"
    run("gen-data", "--out", data, "--num", 2, "--T", 10, "--Tp", 10, "--H", 12, "--W", 12, "--size", 3)
    capsys.readouterr()
    assert run("train", "--data", data, "--hidden", 2, "--depth", 1, "--epochs", 1, "--out", tmp_path / "m.ckpt") == 0
    out = capsys.readouterr().out
    assert "dt=5 (guideline)" in out and "dT=10" in out


def test_train_explicit_dt_not_labelled(tmp_path, ds12, capsys):
    assert run("train", "--data", ds12, "--dt", 1, "--hidden", 2, "--depth", 1, "--epochs", 1, "--out", tmp_path / "m.ckpt") == 0
    out = capsys.readouterr().out
    assert "dt=1\n" in out


def test_train_incompatible_scales(tmp_path, ds12, capsys):
    assert run("train", "--data", ds12, "--dt", 2, "--dT", 3, "--out", tmp_path / "m.ckpt") == 2
    assert "multiple" in capsys.readouterr().err


def test_train_strict_grid(tmp_path, ds12):
    assert run("train", "--data", ds12, "--lr", 0.02, "--strict-grid", "--out", tmp_path / "m.ckpt") == 2


def test_train_missing_data(tmp_path):
    assert run("train", "--data", tmp_path / "none.ustp", "--out", tmp_path / "m.ckpt") == 4


def test_train_recfree(tmp_path, ds12):
    out = tmp_path / "rf.ckpt"
    assert run("train", "--data", ds12, "--model", "recfree-lite", "--hidden", 3, "--depth", 1, "--epochs", 1, "--out", out) == 0
    assert json.loads((tmp_path / "rf.ckpt.json").read_text())["kind"] == "recfree-lite"


def test_eval_csv_rows(tmp_path, ds12, ckpt):
    out = tmp_path / "r.csv"
    assert run("eval", "--data", ds12, "--ckpt", ckpt, "--out", out) == 0
    rows = list(csv.reader(io.StringIO(out.read_text())))
    assert rows[0] == ["frame_index", "mse", "mae", "ssim", "psnr"]
    assert [r[0] for r in rows[1:]] == ["0", "1", "2", "3", "aggregate"]


def test_eval_reduced(tmp_path, ds12, ckpt):
    out = tmp_path / "r.csv"
    assert run("eval", "--data", ds12, "--ckpt", ckpt, "--Tp", 1, "--out", out) == 0
    assert len(out.read_text().strip().split("\n")) == 3


def test_eval_json_has_hash(tmp_path, ds12, ckpt):
    from ustep.data import dataset_hash

    out = tmp_path / "r.json"
    assert run("eval", "--data", ds12, "--ckpt", ckpt, "--report", "json", "--out", out) == 0
    doc = json.loads(out.read_text())
    assert doc["metadata"]["dataset_hash"] == dataset_hash(read_dataset(ds12))
    assert len(doc["per_frame"]) == 4


def test_eval_tp_too_large(tmp_path, ds12, ckpt, capsys):
    assert run("eval", "--data", ds12, "--ckpt", ckpt, "--Tp", 5, "--out", tmp_path / "r.csv") == 2
    assert "ground-truth" in capsys.readouterr().err


def test_eval_shape_mismatch_exit_3(tmp_path, ckpt):
    data = tmp_path / "c2.ustp"
    run("gen-data", "--out", data, "--num", 2, "--C", 2, "--H", 12, "--W", 12, "--size", 3)
    assert run("eval", "--data", data, "--ckpt", ckpt, "--out", tmp_path / "r.csv") == 3


def test_eval_corrupt_checkpoint_exit_3(tmp_path, ds12):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"USTC1\x01")
    assert run("eval", "--data", ds12, "--ckpt", bad, "--out", tmp_path / "r.csv") == 3


def test_eval_is_byte_deterministic(tmp_path, ds12, ckpt):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run("eval", "--data", ds12, "--ckpt", ckpt, "--report", "json", "--out", a)
    run("eval", "--data", ds12, "--ckpt", ckpt, "--report", "json", "--out", b)
    assert a.read_bytes() == b.read_bytes()


def test_compare(tmp_path, ds12, ckpt):
    other = tmp_path / "alt.ckpt"
    assert run("train", "--data", ds12, "--model", "rec-lite", "--hidden", 3, "--depth", 1, "--epochs", 1, "--out", other) == 0
    out = tmp_path / "cmp.csv"
    assert run("compare", "--data", ds12, "--ckpt", ckpt, "--ckpt", other, "--out", out) == 0
    rows = list(csv.reader(io.StringIO(out.read_text())))
    assert rows[0] == ["model", "frame_index", "mse", "mae", "ssim", "psnr"]
    body = rows[1:]
    assert len(body) == 3 * (4 + 1)
    models = [r[0] for r in body]
    assert models == sorted(models) and set(models) == {"alt", "floor", "ustep"}
    assert [r[1] for r in body if r[0] == "floor"] == ["0", "1", "2", "3", "aggregate"]


def test_compare_names_failing_model(tmp_path, ds12, ckpt, capsys):
    bad = tmp_path / "broken.ckpt"
    bad.write_bytes(b"nonsense")
    assert run("compare", "--data", ds12, "--ckpt", ckpt, "--ckpt", bad, "--out", tmp_path / "c.csv") == 3
    assert "broken" in capsys.readouterr().err


def test_gradcheck_pass_and_corrupt(tmp_path, capsys):
    cfg = tmp_path / "g.cfg"
    cfg.write_text("H = 6\nW = 6\nhidden = 3\n")
    assert run("gradcheck", "--config", cfg) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "worst parameter" in out
    assert run("gradcheck", "--config", cfg, "--corrupt-grad") == 1
    assert "FAIL" in capsys.readouterr().out


def test_gradcheck_bad_key(tmp_path):
    cfg = tmp_path / "g.cfg"
    cfg.write_text("frames = 3\n")
    assert run("gradcheck", "--config", cfg) == 2
