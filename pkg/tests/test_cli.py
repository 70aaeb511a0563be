import csv
import hashlib
import importlib
import subprocess
import sys

import numpy as np
import pytest

from csiforge.cli import DEFAULTS, config_hash, load_config, main
from csiforge.neural.modelio import load_model
from csiforge.rng import derive_rng

TR = importlib.import_module("csiforge.pipeline.train")
SMALL = ["--set", "model.d_model=16", "--set", "model.n_layers=1", "--set", "model.n_heads=2",
         "--set", "model.d_ff=32"]


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "d.csid"
    assert main(["gen", "--count", "20", "--seed", "7", "--out", str(path)]) == 0
    return path


class TestGen:
    def test_example(self, tmp_path, capsys):
        out = tmp_path / "d.csid"
        assert main(["gen", "--count", "10", "--seed", "42", "--out", str(out)]) == 0
        text = capsys.readouterr().out
        assert out.exists() and out.stat().st_size == 40 + 10 * 2 * 48 * 14 * 8
        assert "overhead ratio = 16" in text
        assert "eta_dense = 1/7" in text and "eta_sparse = 1/112" in text
        assert "config-hash: " in text

    def test_repeatable(self, tmp_path):
        a, b = tmp_path / "a.csid", tmp_path / "b.csid"
        for p in (a, b):
            assert main(["gen", "--count", "3", "--seed", "42", "--out", str(p)]) == 0
        assert sha(a) == sha(b)

    def test_count_zero(self, tmp_path, capsys):
        assert main(["gen", "--count", "0", "--out", str(tmp_path / "x")]) == 2
        assert "count" in capsys.readouterr().err

    def test_bad_flag(self, capsys):
        assert main(["gen", "--bogus"]) == 2


class TestConfig:
    def test_file_and_overrides(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("# comment\nchannel.snr_db = 10\ntrain.epochs = 3  # trailing\n")
        cfg = load_config(f, ["train.epochs = 4"])
        assert cfg["channel"]["snr_db"] == 10.0 and cfg["train"]["epochs"] == 4
        assert config_hash(cfg) == config_hash(load_config(f, ["train.epochs = 4"]))
        assert config_hash(cfg) != config_hash(load_config())

    def test_unknown_keys_rejected(self, tmp_path, capsys):
        assert main(["gen", "--out", str(tmp_path / "x"), "--set", "channel.nope=1"]) == 2
        assert main(["gen", "--out", str(tmp_path / "x"), "--set", "radio.K=1"]) == 2
        assert main(["gen", "--out", str(tmp_path / "x"), "--set", "channel.K=abc"]) == 2
        assert main(["gen", "--out", str(tmp_path / "x"), "--config", str(tmp_path / "missing.cfg")]) == 3

    def test_defaults_cover_sections(self):
        assert set(DEFAULTS) == {"channel", "pilots", "model", "train", "eval"}


class TestTrain:
    def test_history_rows(self, dataset, tmp_path, capsys):
        model = tmp_path / "m.csim"
        assert main(["train", "--data", str(dataset), "--out", str(model), "--epochs", "2", *SMALL]) == 0
        rows = list(csv.DictReader((tmp_path / "m.csim.history.csv").open()))
        assert [r["epoch"] for r in rows] == ["1", "2"]
        assert "final loss" in capsys.readouterr().out

    def test_lr_zero_keeps_initial(self, dataset, tmp_path):
        model = tmp_path / "m.csim"
        assert main(["train", "--data", str(dataset), "--out", str(model), "--epochs", "1", "--lr", "0",
                     "--seed", "5", *SMALL]) == 0
        kind, cfg, params = load_model(model)
        from csiforge.neural.transformer import ModelConfig
        init = TR.init_params(kind, ModelConfig(**cfg), derive_rng(5, 0x1417))
        for name, t in init.items():
            np.testing.assert_array_equal(params[name].value, t.value)

    def test_deterministic(self, dataset, tmp_path):
        a, b = tmp_path / "a.csim", tmp_path / "b.csim"
        for p in (a, b):
            assert main(["train", "--data", str(dataset), "--out", str(p), "--epochs", "1", *SMALL]) == 0
        assert sha(a) == sha(b)

    def test_missing_dataset(self, tmp_path, capsys):
        assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "m")]) == 3
        assert "not found" in capsys.readouterr().err

    def test_corrupt_dataset(self, tmp_path):
        bad = tmp_path / "bad.csid"
        bad.write_bytes(b"NOTADATASET" + bytes(64))
        assert main(["train", "--data", str(bad), "--out", str(tmp_path / "m")]) == 3


class TestEval:
    def test_outputs(self, dataset, tmp_path, capsys):
        out = tmp_path / "report"
        code = main(["eval", "--data", str(dataset), "--out", str(out), "--split", "all",
                     "--estimators", "input-interp,lmmse,genie", "--set", "eval.ber_bits=20000"])
        assert code == 0
        lines = (out / "nmse_vs_snr.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0].startswith("# columns:")
        rows = list(csv.reader(lines[2:]))
        assert sorted(r[0] for r in rows) == ["genie", "input-interp", "lmmse"]
        assert [r for r in rows if r[0] == "genie"][0][2] == "≤ −100"
        for name in ("subcarrier_error.csv", "ber_vs_snr.csv"):
            assert (out / name).read_text(encoding="utf-8").startswith("# columns:")
        assert (out / "heatmaps" / "genie.csv").exists()

    def test_missing_inputs_listed(self, dataset, tmp_path, capsys):
        code = main(["eval", "--data", str(dataset), "--out", str(tmp_path / "r"),
                     "--estimators", "transformer,lstm,genie"])
        assert code == 3
        err = capsys.readouterr().err
        assert "transformer model" in err and "lstm model" in err


class TestRate:
    ARGS = ["rate", "--alpha0", "0.142857", "--alpha1", "0.0089286", "--rho-db", "15", "--tc", "168"]

    @staticmethod
    def values(text):
        out = {}
        for line in text.splitlines():
            if " = " in line and not line.startswith("#"):
                k, v = line.split(" = ", 1)
                out[k.strip()] = v.split()[0]
        return out

    def test_assume_reliable_positive_gain(self, capsys):
        assert main(self.ARGS + ["--assume-reliable"]) == 0
        v = self.values(capsys.readouterr().out)
        assert v["hypothesis_holds"] == "true"
        assert float(v["gain"]) > 0 and float(v["bound"]) > 0
        assert float(v["gain"]) >= float(v["mid"]) - 1e-12

    def test_gain_at_least_bound(self, capsys):
        # fails: E[log2(1 + x|h|^2)] < log2(1 + x), see the decisions ledger
        assert main(self.ARGS + ["--assume-reliable"]) == 0
        v = self.values(capsys.readouterr().out)
        assert float(v["gain"]) >= float(v["bound"]) > 0

    def test_equal_alphas(self, capsys):
        assert main(["rate", "--alpha0", "0.1", "--alpha1", "0.1", "--rho-db", "15", "--tc", "168",
                     "--assume-reliable"]) == 0
        v = self.values(capsys.readouterr().out)
        assert float(v["gain"]) == 0.0 and v["hypothesis_holds"] == "true"

    def test_without_reconstruction(self, capsys):
        assert main(self.ARGS) == 0
        assert self.values(capsys.readouterr().out)["hypothesis_holds"] == "false"

    def test_sweep_csv(self, tmp_path):
        out = tmp_path / "sweep.csv"
        assert main(self.ARGS + ["--alphas", "0.01,0.1,0.2", "--out", str(out)]) == 0
        rows = list(csv.DictReader(out.open()))
        assert list(rows[0]) == ["alpha", "sigma_e2", "rho_eff", "rate_bits_per_re"]
        assert len(rows) == 3

    def test_alpha_range(self):
        assert main(["rate", "--alpha0", "1.5", "--alpha1", "0.1", "--rho-db", "15", "--tc", "168"]) == 2
        assert main(["rate", "--alpha0", "0.1", "--alpha1", "0.2", "--rho-db", "15", "--tc", "168"]) == 2


def test_console_script_threads(tmp_path):
    env = {"CSIFORGE_THREADS": "1", "PATH": "/usr/bin:/bin:/usr/local/bin"}
    r = subprocess.run([sys.executable, "-m", "csiforge.cli", "rate", "--alpha0", "0.2", "--alpha1", "0.1",
                        "--rho-db", "10", "--tc", "56"], capture_output=True, text=True, env=env)
    assert r.returncode == 0, r.stderr
    assert "config-hash:" in r.stdout
    bad = subprocess.run([sys.executable, "-m", "csiforge.cli", "rate", "--alpha0", "0.2", "--alpha1", "0.1",
                          "--rho-db", "10", "--tc", "56"], capture_output=True, text=True,
                         env=dict(env, CSIFORGE_THREADS="zero"))
    assert bad.returncode == 2
