import json
import subprocess
import sys

import pytest

import prumux
from prumux.cli import main
from prumux.io import save_spec
from prumux.pruner import spec_for_sparsity

SYN = str(prumux.data_path("synthetic_surface.csv"))
QQP = str(prumux.data_path("published_qqp.csv"))
TINY = {"count": 60, "length": 4, "vocab": 8, "d_hidden": 8, "heads": 2, "d_ff": 12, "layers": 1,
        "warmup_epochs": 2, "finetune_epochs": 2, "pruning_epochs": 1}


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(TINY))
    return str(p)


def test_plan_predict_synthetic_fixture(tmp_path, capsys):
    model = str(tmp_path / "m.json")
    code, out, _ = run(capsys, "plan", "fit", "--measurements", SYN, "--reference-task", "synthetic", "--out", model)
    assert code == 0
    code, out, _ = run(capsys, "plan", "predict", "--model", model, "--measurements", SYN, "--budget", "0.05",
                       "--top", "3")
    assert code == 0
    first = out.splitlines()[0]
    assert first.startswith("(2, 0.60)") and "6.8x" in first
    assert len(out.splitlines()) == 3


def test_plan_predict_published_fixture(tmp_path, capsys):
    model = str(tmp_path / "m.json")
    assert run(capsys, "plan", "fit", "--measurements", QQP, "--reference-task", "QQP",
               "--s-knots", "0.6,0.7,0.8,0.9,0.95", "--out", model)[0] == 0
    code, out, _ = run(capsys, "plan", "predict", "--model", model, "--measurements", QQP, "--budget", "0.03",
                       "--top", "3")
    assert code == 0
    assert out.splitlines()[0].startswith("(2, 0.90)  12.4x")


def test_plan_eval_prints_metrics(tmp_path, capsys):
    model = str(tmp_path / "m.json")
    run(capsys, "plan", "fit", "--measurements", SYN, "--reference-task", "synthetic", "--out", model)
    code, out, _ = run(capsys, "plan", "eval", "--model", model, "--measurements", SYN)
    assert code == 0
    fields = dict(line.split("=", 1) for line in out.splitlines())
    assert fields["M_A"] == "1.0000" and fields["M_T"] == "1.0000" and fields["top3_hit_rate"] == "1.0000"


def test_zero_budget_keeps_only_the_baseline(tmp_path, capsys):
    model = str(tmp_path / "m.json")
    run(capsys, "plan", "fit", "--measurements", SYN, "--reference-task", "synthetic", "--out", model)
    code, out, err = run(capsys, "plan", "predict", "--model", model, "--measurements", SYN, "--budget", "0",
                         "--top", "3")
    assert code == 0
    assert out.splitlines()[0].startswith("(1, 0.00)")


def test_missing_files_and_bad_input(tmp_path, capsys):
    code, out, err = run(capsys, "plan", "predict", "--model", str(tmp_path / "none.json"), "--measurements", SYN,
                         "--budget", "0.03")
    assert code != 0 and "error" in err and out == ""
    bad = tmp_path / "bad.csv"
    bad.write_text("task,n,sparsity,accuracy,throughput\nx,2,1.5,0.9,1.0\n")
    code, _, err = run(capsys, "plan", "fit", "--measurements", str(bad), "--reference-task", "x",
                       "--out", str(tmp_path / "m.json"))
    assert code != 0 and "row 2" in err
    assert not (tmp_path / "m.json").exists()


def test_unknown_flag_exits_nonzero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bench", "--bundle", "b.json", "--bogus"])
    assert exc.value.code != 0
    assert "unrecognized" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text('{"lerning_rate": 1}')
    code, _, err = run(capsys, "train", "--phase", "warmup", "--n", "2", "--config", str(p),
                       "--out", str(tmp_path / "b.json"))
    assert code != 0 and "lerning_rate" in err


def test_train_prune_bench_pipeline(tmp_path, cfg, capsys):
    w, t, p, c = (str(tmp_path / f"{x}.json") for x in "wtpc")
    hist = tmp_path / "h.csv"
    assert run(capsys, "train", "--phase", "warmup", "--n", "2", "--config", cfg, "--out", w,
               "--history", str(hist))[0] == 0
    assert hist.read_text().startswith("epoch,loss,accuracy\n")
    assert run(capsys, "train", "--phase", "task", "--n", "2", "--config", cfg, "--bundle", w, "--out", t)[0] == 0
    spec = tmp_path / "spec.json"
    save_spec(spec_for_sparsity(1, 2, 8, 12, 0.5), spec)
    assert run(capsys, "train", "--phase", "prune", "--n", "2", "--config", cfg, "--bundle", t, "--spec",
               str(spec), "--out", p)[0] == 0
    assert run(capsys, "prune", "--bundle", t, "--spec", str(spec), "--out", c)[0] == 0
    meta = json.loads(open(p).read())["meta"]
    assert [e["phase"] for e in meta["phases"]] == ["warmup", "task", "prune"]

    code, out, _ = run(capsys, "bench", "--bundle", p, "--mode", "flops", "--header")
    assert code == 0
    header, row = out.splitlines()
    assert header == "task,n,sparsity,mode,batch,seqlen,throughput,multiplier"
    fields = row.split(",")
    assert fields[1] == "2" and fields[3] == "flops" and float(fields[7]) > 2.0
    again = run(capsys, "bench", "--bundle", p, "--mode", "flops")[1]
    assert again == row + "\n"

    code, out, _ = run(capsys, "bench", "--bundle", c, "--mode", "wall", "--reps", "3", "--seqlen", "16")
    assert code == 0 and out.split(",")[3] == "wall" and len(out.split(",")) == 10

    # the prune phase needs a dense teacher and a spec
    assert run(capsys, "train", "--phase", "prune", "--n", "2", "--config", cfg, "--bundle", p, "--spec",
               str(spec), "--out", str(tmp_path / "x.json"))[0] != 0
    assert run(capsys, "train", "--phase", "prune", "--n", "2", "--config", cfg, "--out",
               str(tmp_path / "x.json"))[0] != 0
    assert run(capsys, "train", "--phase", "task", "--n", "3", "--config", cfg, "--bundle", w,
               "--out", str(tmp_path / "x.json"))[0] != 0


def test_training_commands_are_bit_reproducible(tmp_path, cfg, capsys):
    a, b = str(tmp_path / "a.json"), str(tmp_path / "b.json")
    run(capsys, "train", "--phase", "warmup", "--n", "2", "--config", cfg, "--out", a)
    run(capsys, "train", "--phase", "warmup", "--n", "2", "--config", cfg, "--out", b)
    assert open(a, "rb").read() == open(b, "rb").read()


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "prumux.cli", "plan", "predict", "--model", "nope.json",
                          "--measurements", SYN, "--budget", "0.1"], capture_output=True, text=True)
    assert res.returncode == 1 and res.stdout == "" and res.stderr.startswith("prumux: error:")
