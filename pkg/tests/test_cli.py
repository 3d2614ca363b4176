import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from mdc.checkpoint import load
from mdc.cli import main
from mdc.corpus import two_state_source, write_chunks

SUBCOMMANDS = ["schedule-dump", "loss-compare", "train", "eval", "sample", "selfcheck"]


@pytest.fixture(autouse=True)
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("MDC_SEED", raising=False)
    return tmp_path


@pytest.fixture
def trained(workdir):
    (workdir / "run.cfg").write_text("predictor = tabular\ncontext = positional\nsteps = 30\n"
                                     "batch_size = 16\nlr = 0.05\nema_decay = 0.9\n")
    data = np.random.default_rng(0).integers(0, 3, size=(40, 6))
    write_chunks(workdir / "d.chunks", data, 3)
    assert main(["train", "--config", "run.cfg", "--data", "d.chunks", "--out", "m.mdck", "--seed", "4"]) == 0
    return workdir / "m.mdck"


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_schedule_dump(workdir):
    assert main(["schedule-dump", "--kind", "linear", "--points", "5", "--out", "s.csv"]) == 0
    rows = read_csv("s.csv")
    assert rows[0] == ["t", "alpha", "alpha_prime", "ce_weight", "log_snr"]
    assert len(rows) == 6
    ts = [float(r[0]) for r in rows[1:]]
    assert all(0 < t < 1 for t in ts)
    manifest = json.loads((workdir / "s.csv.manifest.json").read_text())
    assert manifest["subcommand"] == "schedule-dump" and manifest["config"]["points"] == 5
    for key in ("versions", "outputs", "wall_clock_seconds", "seed", "argv"):
        assert key in manifest


def test_schedule_dump_stdout(capsys, workdir):
    assert main(["schedule-dump", "--kind", "cosine", "--points", "3"]) == 0
    assert capsys.readouterr().out.count("\n") == 4
    assert (workdir / "mdc-schedule-dump.manifest.json").exists()


def test_loss_compare(workdir):
    assert main(["loss-compare", "--draws", "20000", "--seed", "1", "--out", "lc.csv"]) == 0
    rows = read_csv("lc.csv")
    assert rows[0] == ["estimator", "mean", "variance", "draws", "exact"]
    by_name = {r[0]: r for r in rows[1:]}
    assert {"L_inf_ce", "L_ctmc_minus_known", "L_ctmc_ds_minus_known", "L_score", "L_maskgit"} <= set(by_name)
    for name in ("L_inf_ce", "L_inf_ce_antithetic", "L_score"):
        mean, var, n, exact = (float(x) for x in by_name[name][1:])
        assert abs(mean - exact) <= 5 * np.sqrt(var / n)


def test_loss_compare_deterministic(workdir):
    main(["loss-compare", "--draws", "500", "--seed", "2", "--out", "a.csv"])
    main(["loss-compare", "--draws", "500", "--seed", "2", "--out", "b.csv"])
    assert (workdir / "a.csv").read_bytes() == (workdir / "b.csv").read_bytes()


def test_seed_from_environment(workdir, monkeypatch):
    main(["loss-compare", "--draws", "300", "--seed", "9", "--out", "flag.csv"])
    monkeypatch.setenv("MDC_SEED", "9")
    main(["loss-compare", "--draws", "300", "--out", "env.csv"])
    assert (workdir / "flag.csv").read_bytes() == (workdir / "env.csv").read_bytes()
    assert json.loads((workdir / "env.csv.manifest.json").read_text())["seed"] == 9
    main(["loss-compare", "--draws", "300", "--seed", "3", "--out", "both.csv"])
    assert json.loads((workdir / "both.csv.manifest.json").read_text())["seed"] == 3


def test_train_eval_sample(trained, workdir, capsys):
    ck = load(trained)
    assert ck.step == 30 and ck.config["seed"] == 4
    metrics = read_csv(str(trained) + ".metrics.csv")
    assert metrics[0] == ["step", "loss_nats_per_token", "grad_norm"] and len(metrics) == 31
    assert (workdir / "m.mdck.manifest.json").exists()

    assert main(["eval", "--checkpoint", "m.mdck", "--data", "d.chunks", "--draws", "2", "--seed", "0"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert 0 < report["bpc"] < np.log2(3) + 0.5 and report["stderr"] > 0

    assert main(["sample", "--checkpoint", "m.mdck", "--steps", "20", "--num", "3", "--seed", "1",
                 "--snapshot-stride", "5", "--out", "s.txt"]) == 0
    lines = (workdir / "s.txt").read_text().splitlines()
    assert len(lines) == 3 and all(len(line.split()) == 6 and "?" not in line for line in lines)
    snaps = sorted(workdir.glob("s.txt.snap*.txt"))
    assert len(snaps) == 20 // 5 + 1
    assert set(snaps[0].read_text().split()) == {"?"}


def test_train_is_deterministic(trained, workdir):
    assert main(["train", "--config", "run.cfg", "--data", "d.chunks", "--out", "m2.mdck", "--seed", "4"]) == 0
    assert trained.read_bytes() == (workdir / "m2.mdck").read_bytes()
    assert main(["train", "--config", "run.cfg", "--data", "d.chunks", "--out", "m3.mdck", "--seed", "4",
                 "--set", "steps=5"]) == 0
    assert load(workdir / "m3.mdck").step == 5


def test_train_from_text_corpus(workdir, capsys):
    (workdir / "corpus.txt").write_text(two_state_source().generate(3000, 0))
    (workdir / "c.cfg").write_text("corpus = corpus.txt\nchunk_len = 16\npredictor = tabular\n"
                                   "context = neighbor\nsteps = 10\nvalid_fraction = 0.1\n")
    assert main(["train", "--config", "c.cfg", "--out", "t.mdck", "--seed", "0"]) == 0
    assert load(workdir / "t.mdck").vocab["symbols"] in ("ab", "ba")
    assert (workdir / "t.mdck.valid.chunks").exists()
    assert main(["eval", "--checkpoint", "t.mdck", "--data", "corpus.txt", "--out", "e.json"]) == 0
    assert "bpc" in json.loads((workdir / "e.json").read_text())
    assert main(["sample", "--checkpoint", "t.mdck", "--steps", "10", "--out", "ts.txt", "--seed", "0"]) == 0
    assert set((workdir / "ts.txt").read_text().strip()) <= {"a", "b"}


def test_selfcheck_passes(capsys, workdir):
    assert main(["selfcheck", "--json", "report.json"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 7 and all(line.startswith("PASS") for line in out)
    report = json.loads((workdir / "report.json").read_text())
    assert all({"name", "passed", "observed", "tolerance"} <= set(r) for r in report)


def test_selfcheck_fault_is_named(capsys):
    assert main(["selfcheck", "--inject-fault", "score_unconstrained"]) == 3
    captured = capsys.readouterr()
    assert "FAIL score_sum_rule" in captured.out
    assert "score_sum_rule" in captured.err


def test_exit_codes(capsys, workdir):
    assert main(["train", "--config", "missing.cfg"]) == 2
    assert "not found" in capsys.readouterr().err
    assert main(["schedule-dump", "--bogus"]) == 1
    err = capsys.readouterr().err
    assert "--bogus" in err and "--points" in err
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["schedule-dump", "--points", "0"]) == 1
    (workdir / "bad.mdck").write_bytes(b"junk")
    assert main(["eval", "--checkpoint", "bad.mdck", "--data", "x"]) == 2


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help(cmd, capsys):
    assert main([cmd, "--help"]) == 0
    assert "usage: mdc " + cmd in capsys.readouterr().out


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "mdc", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    assert all(c in r.stdout for c in SUBCOMMANDS)
