import pytest

import main
from coupalign.config import config
from coupalign.data.store import load_split

from conftest import TINY


def tiny_args():
    pairs = {**TINY, "data.n_val": 4, "data.n_test": 4, "schedule.epochs": 1}
    args = []
    for key, value in pairs.items():
        args += ["--set", f"{key}={value}"]
    return args


@pytest.fixture(autouse=True)
def no_registry(monkeypatch):
    monkeypatch.setattr(config, "registry_enabled", False)


def test_gen_data_train_eval(tmp_path):
    data = str(tmp_path / "data")
    assert main.main(["gen-data", "--n", "8", "--out", data] + tiny_args()) == 0
    assert len(load_split(data, "train")) == 8
    assert len(load_split(data, "test")) == 4
    out_dir = str(tmp_path / "run")
    assert main.main(["train", "--data", data, "--out-dir", out_dir] + tiny_args()) == 0
    assert (tmp_path / "run" / "best.catn").is_file()
    assert main.main(["eval", "--data", data, "--out-dir", out_dir, "--splits", "val"] + tiny_args()) == 0
    assert (tmp_path / "run" / "metrics.csv").is_file()
    assert main.main(["export-attn", "--data", data, "--out-dir", out_dir, "--index", "1"] + tiny_args()) == 0
    assert (tmp_path / "run" / "attention" / "val-1" / "index.csv").is_file()
    results = tmp_path / "reference_run.csv"
    code = main.main(["reference", "--data", data, "--seeds", "0", "--out-dir", str(tmp_path / "ref"),
                      "--results", str(results)] + tiny_args())
    assert code in (0, 1)
    assert len(results.read_text(encoding="utf-8").splitlines()) == 2


def test_exit_codes(tmp_path):
    assert main.main(["train", "--set", "model.patch_size"]) == 2
    assert main.main(["train", "--set", "model.n_queries=0"]) == 2
    assert main.main(["train", "--data", str(tmp_path / "missing")] + tiny_args()) == 3
    assert main.main(["gradcheck", "--checks", "no-such-op"]) == 2


def test_gradcheck_subset(capsys):
    assert main.main(["gradcheck", "--checks", "matmul,relu", "--seeds", "0"]) == 0
    output = capsys.readouterr().out
    assert "matmul" in output and "relu" in output
