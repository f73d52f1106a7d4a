import json
from pathlib import Path

import numpy as np
import pytest

from mbgnn.cli import main
from mbgnn.data import gaussian_ring, write_csv
from mbgnn.rng import SeededRng
from mbgnn.tensor_core import write_mbgt

GOLDEN = Path(__file__).parent / "golden"

TINY = """
seed = 3
data.n = 240
data.train = 200
data.classes = 3
data.dim = 6
data.spread = 0.5
encoder.widths = 8
model.width = 8
model.k = 3
train.batch_size = 20
train.epochs = 2
train.transductive_eval = 10
ablate.k_values = 1,3,19
ablate.batch_sizes = 10,20
robust.severities = 0,1
attack.targets = 4
attack.budget = 30
attack.epsilon = 0.5
gan.iterations = 10
gan.batch_size = 16
gan.eval_every = 5
gan.eval_samples = 200
gan.train_samples = 400
ndb.bins = 5
"""

SUBCOMMANDS = ["train", "ablate-k", "ablate-batch", "robust", "attack", "prop-check", "gan", "ndb"]


@pytest.fixture
def tiny_config(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY)
    return p


def outputs(directory):
    return {
        str(f.relative_to(directory)): f.read_bytes()
        for f in sorted(Path(directory).rglob("*"))
        if f.is_file()
    }


@pytest.mark.parametrize("sub", SUBCOMMANDS)
def test_every_subcommand_is_deterministic(sub, tiny_config, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    before = set(p.name for p in tmp_path.iterdir())
    assert main([sub, "--config", str(tiny_config), "--out", "a"]) == 0
    assert main([sub, "--config", str(tiny_config), "--out", "b"]) == 0
    a, b = outputs(tmp_path / "a"), outputs(tmp_path / "b")
    assert a.keys() == b.keys()
    assert "config.txt" in a and "results.json" in a
    for name in a:
        assert a[name] == b[name], name
    # nothing written outside the two output directories
    assert set(p.name for p in tmp_path.iterdir()) == before | {"a", "b"}


@pytest.mark.parametrize("name,sub", [("train_tiny", "train"), ("prop_check", "prop-check")])
def test_golden_outputs(name, sub, tmp_path):
    out = tmp_path / "out"
    assert main([sub, "--config", str(GOLDEN / f"{name}.cfg"), "--out", str(out)]) == 0
    golden = GOLDEN / name
    for f in golden.iterdir():
        assert (out / f.name).read_bytes() == f.read_bytes(), f.name


def test_echoed_config_reproduces_run(tiny_config, tmp_path):
    assert main(["train", "--config", str(tiny_config), "--out", str(tmp_path / "a"), "--seed", "9"]) == 0
    echoed = tmp_path / "a" / "config.txt"
    assert "seed = 9" in echoed.read_text()
    assert main(["train", "--config", str(echoed), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "history.csv").read_bytes() == (tmp_path / "b" / "history.csv").read_bytes()


def test_prop_check_reports_quarter_for_k3(tmp_path):
    cfg = tmp_path / "p.cfg"
    cfg.write_text("prop.k = 3\nprop.variant = gcn_self_loop\n")
    assert main(["prop-check", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    report = json.loads((tmp_path / "o" / "results.json").read_text())
    assert abs(report["ratio"] - 0.25) <= 1e-9


def test_usage_errors_exit_2(tiny_config, tmp_path, capsys):
    out = str(tmp_path / "o")
    with pytest.raises(SystemExit) as exc:
        main(["bogus", "--config", str(tiny_config)])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2
    assert main(["train", "--config", str(tiny_config), "--override", "model.kk=3", "--out", out]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.cfg"), "--out", out]) == 2
    assert main(["ablate-k", "--config", str(tiny_config), "--override", "ablate.k_values=1,50", "--out", out]) == 2
    assert main(["train", "--config", str(tiny_config), "--seed", "-1", "--out", out]) == 2
    assert "unknown config key" in capsys.readouterr().err


def test_runtime_failure_exits_nonzero(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"data.kind = csv\ndata.path = {tmp_path / 'nope.csv'}\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_threads_env_gives_same_sweep(tiny_config, tmp_path, monkeypatch):
    monkeypatch.setenv("MBGNN_THREADS", "2")
    assert main(["ablate-k", "--config", str(tiny_config), "--out", str(tmp_path / "t2")]) == 0
    monkeypatch.setenv("MBGNN_THREADS", "1")
    assert main(["ablate-k", "--config", str(tiny_config), "--out", str(tmp_path / "t1")]) == 0
    assert outputs(tmp_path / "t1") == outputs(tmp_path / "t2")
    monkeypatch.setenv("MBGNN_THREADS", "many")
    assert main(["ablate-k", "--config", str(tiny_config), "--out", str(tmp_path / "t3")]) == 2


def test_ndb_on_files(tmp_path):
    train = gaussian_ring(8, 1000, SeededRng(1)).features
    collapsed = np.array([2.0, 0.0]) + SeededRng(2).normal((1000, 2), 0.05)
    write_csv(tmp_path / "train.csv", train, np.zeros(1000, dtype=int))
    write_mbgt(tmp_path / "gen.mbgt", collapsed)
    cfg = tmp_path / "n.cfg"
    cfg.write_text(f"ndb.bins = 10\nndb.train_path = {tmp_path / 'train.csv'}\nndb.generated_path = {tmp_path / 'gen.mbgt'}\n")
    assert main(["ndb", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    report = json.loads((tmp_path / "o" / "results.json").read_text())
    assert report["ndb_score"] >= 0.8


def test_help_mentions_threads(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    assert "MBGNN_THREADS" in capsys.readouterr().out
