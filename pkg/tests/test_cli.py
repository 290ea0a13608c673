"""Command-line interface."""

import csv
import shutil
import subprocess
import time

import numpy as np
import pytest

from gradcomp import archive, cli, gennorm, harness, tensorio
from gradcomp.gennorm import GenNormParams
from gradcomp.quantizer import build_grid, quantize_values
from gradcomp.tensorio import GradientRecord

SMALL_BENCH = "users = 2\nrounds = 3\nsamples_per_user = 64\ntest_samples = 200\n"


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(cli.OUTPUT_DIR_ENV, raising=False)
    return tmp_path


@pytest.fixture
def gtf(workdir):
    x = gennorm.sample(GenNormParams(0.0, 1e-3, 1.2), 10**5, seed=0).astype(np.float32)
    y = gennorm.sample(GenNormParams(0.0, 1e-2, 2.0), 3000, seed=1).astype(np.float32)
    path = workdir / "grads.gtf"
    tensorio.write_records(path, [GradientRecord("w1", 4, (100, 1000), x),
                                  GradientRecord("w2", 4, (3000,), y)])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestFit:
    def test_fit(self, gtf, workdir):
        assert cli.main(["fit", str(gtf)]) == cli.EXIT_OK
        rows = read_csv(workdir / "grads.fits.csv")
        assert [r["layer"] for r in rows] == ["w1", "w2"]
        assert 1.1 <= float(rows[0]["beta"]) <= 1.3
        assert float(rows[0]["w2_gn"]) < float(rows[0]["w2_n"])

    def test_missing_input(self, workdir):
        assert cli.main(["fit", "nope.gtf", "-o", "out.csv"]) == cli.EXIT_FORMAT
        assert list(workdir.iterdir()) == []

    def test_too_few_values(self, workdir):
        tensorio.write_record(workdir / "tiny.gtf", GradientRecord("t", 0, (5,), np.arange(5.0)))
        assert cli.main(["fit", "tiny.gtf", "-o", "out.csv"]) == cli.EXIT_FIT
        assert not (workdir / "out.csv").exists()

    def test_corrupt_input(self, gtf, workdir):
        raw = bytearray(gtf.read_bytes())
        raw[100] ^= 1
        gtf.write_bytes(bytes(raw))
        assert cli.main(["fit", str(gtf), "-o", "out.csv"]) == cli.EXIT_FORMAT
        assert not (workdir / "out.csv").exists()

    def test_output_dir_env(self, gtf, workdir, monkeypatch):
        (workdir / "outs").mkdir()
        monkeypatch.setenv(cli.OUTPUT_DIR_ENV, str(workdir / "outs"))
        assert cli.main(["fit", str(gtf)]) == cli.EXIT_OK
        assert (workdir / "outs" / "grads.fits.csv").exists()


class TestCompress:
    @pytest.mark.parametrize("model", ["gennorm", "norm", "empirical"])
    def test_round_trip_to_centers(self, gtf, workdir, model):
        assert cli.main(["compress", str(gtf), "--model", model, "-o", "a.gca"]) == cli.EXIT_OK
        assert cli.main(["decompress", "a.gca", "-o", "back.gtf"]) == cli.EXIT_OK
        orig, back = tensorio.read_records(gtf), tensorio.read_records("back.gtf")
        grid = build_grid()
        for a, b in zip(orig, back, strict=True):
            assert (a.layer_label, a.epoch, a.shape) == (b.layer_label, b.epoch, b.shape)
            ref = quantize_values(a.values.astype(np.float64), grid).astype(np.float32)
            np.testing.assert_array_equal(b.values, ref)

    def test_default_names(self, gtf, workdir):
        assert cli.main(["compress", str(gtf)]) == cli.EXIT_OK
        assert cli.main(["decompress", "grads.gca", "-o", "x.gtf"]) == cli.EXIT_OK
        assert (workdir / "grads.gca").exists() and (workdir / "x.gtf").exists()
        original = gtf.read_bytes()
        assert cli.main(["decompress", "grads.gca"]) == cli.EXIT_OK
        assert (workdir / "grads.out.gtf").read_bytes() == (workdir / "x.gtf").read_bytes()
        assert gtf.read_bytes() == original

    def test_lz78_costs_more(self, gtf, workdir, capsys):
        cli.main(["compress", str(gtf), "-o", "h.gca"])
        cli.main(["compress", str(gtf), "--coder", "lz78", "-o", "l.gca"])
        h = archive.from_bytes((workdir / "h.gca").read_bytes())
        lz = archive.from_bytes((workdir / "l.gca").read_bytes())
        for a, b in zip(h, lz):
            assert b.blob.bit_length > a.blob.bit_length
        assert cli.main(["decompress", "l.gca", "-o", "l.gtf"]) == cli.EXIT_OK
        assert "bits_per_symbol" in capsys.readouterr().out

    def test_other_format(self, gtf, workdir):
        assert cli.main(["compress", str(gtf), "--format", "1,4,3", "-o", "a.gca"]) == cli.EXIT_OK
        assert cli.main(["decompress", "a.gca", "-o", "b.gtf"]) == cli.EXIT_OK

    def test_corrupt_archive(self, gtf, workdir):
        cli.main(["compress", str(gtf), "-o", "a.gca"])
        raw = bytearray((workdir / "a.gca").read_bytes())
        raw[200] ^= 0xFF
        (workdir / "a.gca").write_bytes(bytes(raw))
        assert cli.main(["decompress", "a.gca", "-o", "b.gtf"]) == cli.EXIT_CORRUPT
        assert not (workdir / "b.gtf").exists()

    def test_usage_errors(self, gtf):
        for argv in (["compress", str(gtf), "--model", "cauchy"],
                     ["compress", str(gtf), "--format", "x"],
                     ["frobnicate"], []):
            with pytest.raises(SystemExit) as exc:
                cli.main(argv)
            assert exc.value.code == cli.EXIT_USAGE


class TestBench:
    def run(self, workdir, out, *extra):
        (workdir / "small.cfg").write_text(SMALL_BENCH)
        return cli.main(["bench", "small.cfg", "-o", out, *extra])

    def test_outputs_and_determinism(self, workdir):
        assert self.run(workdir, "a") == cli.EXIT_OK
        assert self.run(workdir, "b") == cli.EXIT_OK
        for name in ("ledger.csv", "rounds.csv", "fits.csv"):
            assert (workdir / "a" / name).read_bytes() == (workdir / "b" / name).read_bytes()
        assert self.run(workdir, "c", "--seed", "9") == cli.EXIT_OK
        a = (workdir / "a" / "ledger.csv").read_text().splitlines()
        c = (workdir / "c" / "ledger.csv").read_text().splitlines()
        assert a[0] == c[0] and a != c

    def test_ledger_matches_library(self, workdir):
        self.run(workdir, "a")
        cfg = harness.BenchConfig.from_text(SMALL_BENCH)
        assert (workdir / "a" / "ledger.csv").read_text() == harness.run_experiment(cfg).ledger.to_csv()

    def test_bad_config(self, workdir):
        (workdir / "bad.cfg").write_text("users = lots\n")
        assert cli.main(["bench", "bad.cfg", "-o", "out"]) == cli.EXIT_CONFIG
        assert cli.main(["bench", "missing.cfg", "-o", "out"]) == cli.EXIT_CONFIG
        assert not (workdir / "out").exists()

    def test_default_config_run(self, workdir):
        start = time.perf_counter()
        assert cli.main(["bench", "-o", "ref"]) == cli.EXIT_OK
        assert time.perf_counter() - start < 300
        ledger = read_csv(workdir / "ref" / "ledger.csv")
        assert len(ledger) == 50 * 4 * 2 * 3
        assert len(read_csv(workdir / "ref" / "fits.csv")) == 50 * 2
        assert len(read_csv(workdir / "ref" / "rounds.csv")) == 50 * 2 * 3

    def test_bundled_config_is_reference(self):
        assert harness.BenchConfig.from_text(cli.default_config_text()) == harness.reference_config()


class TestGrid:
    def test_dump(self, workdir, capsys):
        assert cli.main(["grid"]) == cli.EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 251 and lines[0] == "index,lower_edge,upper_edge,center"
        assert cli.main(["grid", "-o", "g.csv"]) == cli.EXIT_OK
        assert len(read_csv(workdir / "g.csv")) == 250

    @pytest.mark.skipif(shutil.which("gradcomp") is None, reason="console script not installed")
    def test_console_script(self, workdir):
        out = subprocess.run(["gradcomp", "grid", "--format", "1,4,3"], capture_output=True,
                             text=True, check=True)
        assert out.stdout.startswith("index,")
        bad = subprocess.run(["gradcomp", "fit", "missing.gtf"], capture_output=True, text=True)
        assert bad.returncode == cli.EXIT_FORMAT and "format error" in bad.stderr
